#pragma once

#include <array>
#include <span>
#include <vector>

#include "satdet/geometry.hpp"

namespace satdet::det {

/// Anchor layout over the detector's feature maps. Aspect ratios are
/// width / height.
struct AnchorConfig {
    std::vector<int> feature_map_strides;
    std::vector<std::vector<double>> anchor_scales_px;  // one list per feature map
    std::vector<double> aspect_ratios;

    std::size_t anchors_per_cell(std::size_t map) const {
        return anchor_scales_px.at(map).size() * aspect_ratios.size();
    }

    friend bool operator==(const AnchorConfig&, const AnchorConfig&) = default;
};

struct Anchor {
    double cx = 0.0;
    double cy = 0.0;
    double w = 0.0;
    double h = 0.0;

    BoundingBox box() const { return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h}; }
};

/// Feature-map extent for an input dimension: ceil(extent / stride).
int feature_map_extent(int input_extent, int stride);

/// Anchors in input-pixel coordinates, ordered by feature map, then
/// row-major over cells, then scales, then aspect ratios. Rejects any
/// anchor larger than the input.
std::vector<Anchor> build_anchors(const AnchorConfig& config, int input_h, int input_w);

/// Regression targets are divided by these variances, as in SSD.
struct BoxCoder {
    double center_variance = 0.1;
    double size_variance = 0.2;
};

using BoxOffsets = std::array<double, 4>;  // (dx, dy, dw, dh)

BoxOffsets encode_box(const BoundingBox& gt, const Anchor& anchor, const BoxCoder& coder = {});
BoundingBox decode_box(const BoxOffsets& offsets, const Anchor& anchor, const BoxCoder& coder = {});

struct AnchorLabel {
    enum class Kind : std::uint8_t { Negative, Positive, Ignore };
    Kind kind = Kind::Negative;
    int gt_index = -1;
};

/// Positive when IoU >= iou_pos with some ground truth (assigned to the
/// best one), negative when the best IoU < iou_neg, ignored otherwise.
/// Each ground truth additionally forces its best anchor positive. Ties go
/// to the lowest index.
std::vector<AnchorLabel> match_anchors(std::span<const BoundingBox> gt_boxes, std::span<const Anchor> anchors,
                                       double iou_pos, double iou_neg);

} // namespace satdet::det
