#include "satdet/det/detect.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "satdet/error.hpp"

namespace satdet::det {

void DetectOptions::validate() const {
    if (!(confidence_threshold >= 0.0 && confidence_threshold <= 1.0)) {
        throw ConfigError("confidence threshold must lie in [0, 1]");
    }
    if (!(nms_iou > 0.0 && nms_iou <= 1.0)) throw ConfigError("NMS IoU must lie in (0, 1]");
}

double sigmoid(double logit) {
    const double z = std::clamp(logit, -kLogitClamp, kLogitClamp);
    return 1.0 / (1.0 + std::exp(-z));
}

nn::TensorF preprocess(const Image16& image, int h, int w) {
    if (image.empty()) throw DataError("cannot preprocess an empty image");
    nn::TensorF out({1, 1, static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
    const double sx = static_cast<double>(image.width()) / w;
    const double sy = static_cast<double>(image.height()) / h;
    constexpr double kNorm = 1.0 / 65535.0;

    // Horizontal taps are shared by every output row.
    std::vector<int> x0(static_cast<std::size_t>(w)), x1(static_cast<std::size_t>(w));
    std::vector<double> fx(static_cast<std::size_t>(w));
    for (int j = 0; j < w; ++j) {
        const double src = std::clamp((j + 0.5) * sx - 0.5, 0.0, image.width() - 1.0);
        x0[j] = static_cast<int>(std::floor(src));
        x1[j] = std::min(x0[j] + 1, image.width() - 1);
        fx[j] = src - x0[j];
    }
    for (int i = 0; i < h; ++i) {
        const double src = std::clamp((i + 0.5) * sy - 0.5, 0.0, image.height() - 1.0);
        const int y0 = static_cast<int>(std::floor(src));
        const int y1 = std::min(y0 + 1, image.height() - 1);
        const double fy = src - y0;
        const auto r0 = image.row(y0);
        const auto r1 = image.row(y1);
        float* dst = &out.at(0, 0, static_cast<std::size_t>(i), 0);
        for (int j = 0; j < w; ++j) {
            const double top = r0[x0[j]] + fx[j] * (r0[x1[j]] - r0[x0[j]]);
            const double bot = r1[x0[j]] + fx[j] * (r1[x1[j]] - r1[x0[j]]);
            dst[j] = static_cast<float>((top + fy * (bot - top)) * kNorm);
        }
    }
    std::vector<float> sorted(out.data().begin(), out.data().end());
    const auto mid = sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2);
    std::nth_element(sorted.begin(), mid, sorted.end());
    const float sky = *mid;
    for (float& v : out.data()) v -= sky;
    return out;
}

std::vector<Detection> nms(const std::vector<Detection>& detections, double iou_threshold) {
    std::vector<std::size_t> order(detections.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return detections[a].confidence > detections[b].confidence;
    });
    std::vector<Detection> kept;
    for (std::size_t idx : order) {
        const Detection& d = detections[idx];
        bool suppressed = false;
        for (const Detection& k : kept) {
            if (iou(k.box, d.box) >= iou_threshold) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(d);
    }
    return kept;
}

std::vector<Detection> decode_detections(std::span<const float> rows, const std::vector<Anchor>& anchors,
                                         const ModelConfig& config, int image_w, int image_h,
                                         const DetectOptions& options) {
    options.validate();
    if (rows.size() != anchors.size() * 5) {
        throw ShapeError("prediction rows (" + std::to_string(rows.size()) + ") do not match " +
                         std::to_string(anchors.size()) + " anchors");
    }
    const double sx = static_cast<double>(image_w) / config.input_w;
    const double sy = static_cast<double>(image_h) / config.input_h;
    std::vector<Detection> candidates;
    for (std::size_t a = 0; a < anchors.size(); ++a) {
        const float* r = rows.data() + a * 5;
        const double conf = sigmoid(r[4]);
        if (conf < options.confidence_threshold) continue;
        const BoundingBox b = decode_box({r[0], r[1], r[2], r[3]}, anchors[a]);
        BoundingBox m{std::clamp(b.x_min * sx, 0.0, static_cast<double>(image_w)),
                      std::clamp(b.y_min * sy, 0.0, static_cast<double>(image_h)),
                      std::clamp(b.x_max * sx, 0.0, static_cast<double>(image_w)),
                      std::clamp(b.y_max * sy, 0.0, static_cast<double>(image_h))};
        if (!m.valid()) continue;
        candidates.push_back({m, conf});
    }
    return nms(candidates, options.nms_iou);
}

FloatDetector::FloatDetector(const DetectorModel& model)
    : graph_(fold_model(model)), anchors_(model.anchors()) {}

std::vector<float> FloatDetector::predict(const Image16& image) const {
    const auto heads = run_graph(graph_, preprocess(image, graph_.config.input_h, graph_.config.input_w));
    return flatten_head_outputs(heads, graph_.config, 0);
}

std::vector<Detection> FloatDetector::detect(const Image16& image, const DetectOptions& options) const {
    return decode_detections(predict(image), anchors_, graph_.config, image.width(), image.height(), options);
}

std::vector<Detection> detect(const DetectorModel& model, const Image16& image, const DetectOptions& options) {
    return FloatDetector(model).detect(image, options);
}

} // namespace satdet::det
