#include "satdet/det/anchors.hpp"

#include <cmath>
#include <string>

#include "satdet/error.hpp"

namespace satdet::det {

int feature_map_extent(int input_extent, int stride) {
    if (input_extent <= 0 || stride <= 0) {
        throw ConfigError("feature map extent needs a positive input size and stride");
    }
    return (input_extent + stride - 1) / stride;
}

std::vector<Anchor> build_anchors(const AnchorConfig& config, int input_h, int input_w) {
    const std::size_t maps = config.feature_map_strides.size();
    if (maps == 0) throw ConfigError("anchor config has no feature maps");
    if (config.anchor_scales_px.size() != maps) {
        throw ConfigError("anchor config: " + std::to_string(config.anchor_scales_px.size()) +
                          " scale lists for " + std::to_string(maps) + " feature maps");
    }
    if (config.aspect_ratios.empty()) throw ConfigError("anchor config has no aspect ratios");
    for (double r : config.aspect_ratios) {
        if (!(r > 0.0)) throw ConfigError("anchor aspect ratios must be positive");
    }

    std::vector<Anchor> anchors;
    for (std::size_t m = 0; m < maps; ++m) {
        const int stride = config.feature_map_strides[m];
        const auto& scales = config.anchor_scales_px[m];
        if (scales.empty()) throw ConfigError("feature map " + std::to_string(m) + " has no anchor scales");
        // Shapes are shared by every cell of the map.
        std::vector<std::pair<double, double>> shapes;
        for (double s : scales) {
            if (!(s > 0.0)) throw ConfigError("anchor scales must be positive");
            for (double r : config.aspect_ratios) {
                const double w = s * std::sqrt(r);
                const double h = s / std::sqrt(r);
                if (w > input_w || h > input_h) {
                    throw ConfigError("anchor " + std::to_string(w) + "x" + std::to_string(h) +
                                      " does not fit the " + std::to_string(input_w) + "x" +
                                      std::to_string(input_h) + " input");
                }
                shapes.emplace_back(w, h);
            }
        }
        const int fh = feature_map_extent(input_h, stride);
        const int fw = feature_map_extent(input_w, stride);
        anchors.reserve(anchors.size() + static_cast<std::size_t>(fh * fw) * shapes.size());
        for (int y = 0; y < fh; ++y) {
            for (int x = 0; x < fw; ++x) {
                const double cx = (x + 0.5) * stride;
                const double cy = (y + 0.5) * stride;
                for (auto [w, h] : shapes) anchors.push_back({cx, cy, w, h});
            }
        }
    }
    return anchors;
}

BoxOffsets encode_box(const BoundingBox& gt, const Anchor& anchor, const BoxCoder& coder) {
    if (!(gt.width() > 0.0 && gt.height() > 0.0)) {
        throw DataError("cannot encode a box with non-positive size");
    }
    if (!(anchor.w > 0.0 && anchor.h > 0.0)) {
        throw DataError("cannot encode against an anchor with non-positive size");
    }
    const Point2 c = gt.center();
    return {(c.x - anchor.cx) / anchor.w / coder.center_variance,
            (c.y - anchor.cy) / anchor.h / coder.center_variance,
            std::log(gt.width() / anchor.w) / coder.size_variance,
            std::log(gt.height() / anchor.h) / coder.size_variance};
}

BoundingBox decode_box(const BoxOffsets& t, const Anchor& anchor, const BoxCoder& coder) {
    const double cx = anchor.cx + t[0] * coder.center_variance * anchor.w;
    const double cy = anchor.cy + t[1] * coder.center_variance * anchor.h;
    const double w = anchor.w * std::exp(t[2] * coder.size_variance);
    const double h = anchor.h * std::exp(t[3] * coder.size_variance);
    return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

std::vector<AnchorLabel> match_anchors(std::span<const BoundingBox> gt_boxes, std::span<const Anchor> anchors,
                                       double iou_pos, double iou_neg) {
    if (iou_neg > iou_pos) {
        throw ConfigError("iou_neg_threshold must not exceed iou_pos_threshold");
    }
    std::vector<AnchorLabel> labels(anchors.size());
    if (gt_boxes.empty()) return labels;

    std::vector<double> best_for_gt(gt_boxes.size(), -1.0);
    std::vector<std::size_t> best_anchor(gt_boxes.size(), 0);
    for (std::size_t a = 0; a < anchors.size(); ++a) {
        const BoundingBox ab = anchors[a].box();
        double best = -1.0;
        int best_gt = -1;
        for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
            const double v = iou(ab, gt_boxes[g]);
            if (v > best) {
                best = v;
                best_gt = static_cast<int>(g);
            }
            if (v > best_for_gt[g]) {
                best_for_gt[g] = v;
                best_anchor[g] = a;
            }
        }
        if (best >= iou_pos) {
            labels[a] = {AnchorLabel::Kind::Positive, best_gt};
        } else if (best >= iou_neg) {
            labels[a] = {AnchorLabel::Kind::Ignore, -1};
        }
    }
    // Reverse order so that the lowest ground-truth index keeps a shared anchor.
    for (std::size_t g = gt_boxes.size(); g-- > 0;) {
        labels[best_anchor[g]] = {AnchorLabel::Kind::Positive, static_cast<int>(g)};
    }
    return labels;
}

} // namespace satdet::det
