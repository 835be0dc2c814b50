#pragma once

#include <span>
#include <vector>

#include "satdet/det/graph.hpp"
#include "satdet/det/model.hpp"
#include "satdet/detection.hpp"
#include "satdet/image.hpp"

namespace satdet::det {

struct DetectOptions {
    double confidence_threshold = 0.25;
    double nms_iou = 0.45;

    void validate() const;
};

/// Logits are clamped to this magnitude before the sigmoid, so confidence
/// stays strictly inside (0, 1).
inline constexpr double kLogitClamp = 30.0;

double sigmoid(double logit);

/// Bilinear resize (pixel-centre aligned, edge clamped) to [1, 1, h, w]
/// with intensities divided by 65535, minus the median of the result, so the
/// sky sits at zero like the convolution padding.
nn::TensorF preprocess(const Image16& image, int h, int w);

/// Greedy NMS: visits detections by descending confidence (lower input
/// index first on ties) and drops any box with IoU >= iou_threshold against
/// an already kept one.
std::vector<Detection> nms(const std::vector<Detection>& detections, double iou_threshold);

/// Threshold, decode, map to image pixels (clamped to the frame) and NMS.
/// `rows` holds (dx, dy, dw, dh, logit) per anchor.
std::vector<Detection> decode_detections(std::span<const float> rows, const std::vector<Anchor>& anchors,
                                         const ModelConfig& config, int image_w, int image_h,
                                         const DetectOptions& options);

/// Folded float32 detector.
class FloatDetector {
public:
    explicit FloatDetector(const DetectorModel& model);

    std::vector<Detection> detect(const Image16& image, const DetectOptions& options = {}) const;
    /// Per-anchor rows (dx, dy, dw, dh, logit) for one image.
    std::vector<float> predict(const Image16& image) const;

    const InferenceGraph& graph() const { return graph_; }
    const std::vector<Anchor>& anchors() const { return anchors_; }

private:
    InferenceGraph graph_;
    std::vector<Anchor> anchors_;
};

std::vector<Detection> detect(const DetectorModel& model, const Image16& image, const DetectOptions& options = {});

} // namespace satdet::det
