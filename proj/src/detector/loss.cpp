#include "satdet/det/loss.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "satdet/error.hpp"

namespace satdet::det {

AnchorTargets make_targets(std::span<const BoundingBox> gt_boxes, std::span<const Anchor> anchors, double iou_pos,
                           double iou_neg, const BoxCoder& coder) {
    AnchorTargets t;
    t.labels = match_anchors(gt_boxes, anchors, iou_pos, iou_neg);
    t.offsets.assign(anchors.size(), BoxOffsets{});
    for (std::size_t a = 0; a < anchors.size(); ++a) {
        if (t.labels[a].kind != AnchorLabel::Kind::Positive) continue;
        t.offsets[a] = encode_box(gt_boxes[static_cast<std::size_t>(t.labels[a].gt_index)], anchors[a], coder);
        ++t.positives;
    }
    return t;
}

double smooth_l1(double x) {
    const double ax = std::abs(x);
    return ax < 1.0 ? 0.5 * x * x : ax - 0.5;
}

double smooth_l1_grad(double x) { return std::abs(x) < 1.0 ? x : (x > 0.0 ? 1.0 : -1.0); }

double bce_with_logits(double z, double y) { return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z))); }

LossValue ssd_loss(std::span<const double> predictions, std::span<const AnchorTargets> targets, double neg_pos_ratio,
                   std::span<double> grad) {
    if (targets.empty()) throw ShapeError("ssd_loss needs at least one image");
    const std::size_t n_anchors = targets.front().labels.size();
    if (predictions.size() != targets.size() * n_anchors * 5) {
        throw ShapeError("ssd_loss: " + std::to_string(predictions.size()) + " predictions for " +
                         std::to_string(targets.size()) + " images of " + std::to_string(n_anchors) + " anchors");
    }
    if (!grad.empty() && grad.size() != predictions.size()) throw ShapeError("ssd_loss: gradient buffer size mismatch");
    if (neg_pos_ratio < 0.0) throw ConfigError("neg_pos_ratio must be non-negative");

    LossValue out;
    for (const auto& t : targets) {
        if (t.labels.size() != n_anchors) throw ShapeError("ssd_loss: images disagree on anchor count");
        out.positives += t.positives;
    }
    const double norm = 1.0 / static_cast<double>(std::max<std::size_t>(out.positives, 1));
    if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);

    std::vector<std::size_t> negatives;
    for (std::size_t img = 0; img < targets.size(); ++img) {
        const AnchorTargets& t = targets[img];
        const double* p = predictions.data() + img * n_anchors * 5;
        double* g = grad.empty() ? nullptr : grad.data() + img * n_anchors * 5;

        negatives.clear();
        for (std::size_t a = 0; a < n_anchors; ++a) {
            const double z = p[a * 5 + 4];
            switch (t.labels[a].kind) {
            case AnchorLabel::Kind::Positive: {
                out.classification += bce_with_logits(z, 1.0);
                if (g) g[a * 5 + 4] = (1.0 / (1.0 + std::exp(-z)) - 1.0) * norm;
                for (int j = 0; j < 4; ++j) {
                    const double d = p[a * 5 + j] - t.offsets[a][j];
                    out.localization += smooth_l1(d);
                    if (g) g[a * 5 + j] = smooth_l1_grad(d) * norm;
                }
                break;
            }
            case AnchorLabel::Kind::Negative:
                negatives.push_back(a);
                break;
            case AnchorLabel::Kind::Ignore:
                break;
            }
        }
        // Hard-negative mining: BCE against 0 is increasing in the logit, so
        // the highest-loss negatives are the highest logits.
        const auto keep = std::min(negatives.size(),
                                   static_cast<std::size_t>(std::llround(
                                       neg_pos_ratio * static_cast<double>(std::max<std::size_t>(t.positives, 1)))));
        std::partial_sort(negatives.begin(), negatives.begin() + static_cast<std::ptrdiff_t>(keep), negatives.end(),
                          [&](std::size_t a, std::size_t b) {
                              const double za = p[a * 5 + 4], zb = p[b * 5 + 4];
                              return za != zb ? za > zb : a < b;
                          });
        for (std::size_t i = 0; i < keep; ++i) {
            const std::size_t a = negatives[i];
            const double z = p[a * 5 + 4];
            out.classification += bce_with_logits(z, 0.0);
            if (g) g[a * 5 + 4] = 1.0 / (1.0 + std::exp(-z)) * norm;
        }
        out.negatives += keep;
    }
    out.classification *= norm;
    out.localization *= norm;
    out.total = out.classification + out.localization;
    return out;
}

} // namespace satdet::det
