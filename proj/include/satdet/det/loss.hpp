#pragma once

#include <span>
#include <vector>

#include "satdet/det/anchors.hpp"

namespace satdet::det {

/// Per-image matching result: a label per anchor and, for positives, the
/// encoded offsets of the assigned ground truth.
struct AnchorTargets {
    std::vector<AnchorLabel> labels;
    std::vector<BoxOffsets> offsets;
    std::size_t positives = 0;
};

AnchorTargets make_targets(std::span<const BoundingBox> gt_boxes, std::span<const Anchor> anchors, double iou_pos,
                           double iou_neg, const BoxCoder& coder = {});

/// Huber-style smooth L1 with knee at |x| = 1.
double smooth_l1(double x);
double smooth_l1_grad(double x);

/// Numerically stable binary cross-entropy on a logit.
double bce_with_logits(double logit, double target);

struct LossValue {
    double total = 0.0;
    double classification = 0.0;
    double localization = 0.0;
    std::size_t positives = 0;
    std::size_t negatives = 0;  // mined negatives that entered the loss
};

/// predictions: images x anchors x (dx, dy, dw, dh, logit). Objectness BCE
/// over positives plus the highest-loss negatives of each image
/// (neg_pos_ratio x max(positives, 1) of them), smooth L1 over positive
/// offsets, both divided by the batch's positive count (or 1). When `grad`
/// is non-empty it receives d(total)/d(predictions).
LossValue ssd_loss(std::span<const double> predictions, std::span<const AnchorTargets> targets,
                   double neg_pos_ratio, std::span<double> grad = {});

} // namespace satdet::det
