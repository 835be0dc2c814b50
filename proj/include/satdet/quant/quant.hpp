#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "satdet/det/detect.hpp"
#include "satdet/det/graph.hpp"
#include "satdet/image.hpp"

namespace satdet::quant {

inline constexpr int kQMin = -128;
inline constexpr int kQMax = 127;
/// Scale used when a calibrated range collapses to a single value.
inline constexpr double kDegenerateScale = 1e-8;

/// Affine int8 mapping: v = (q - zero_point) * scale.
struct QuantParams {
    double scale = 1.0;
    int zero_point = 0;

    void validate() const;
    friend bool operator==(const QuantParams&, const QuantParams&) = default;
};

std::int8_t quantize_value(double v, const QuantParams& p);
double dequantize_value(std::int8_t q, const QuantParams& p);
std::vector<std::int8_t> quantize_tensor(std::span<const double> values, const QuantParams& p);
std::vector<std::int8_t> quantize_tensor(std::span<const float> values, const QuantParams& p);
std::vector<double> dequantize_tensor(std::span<const std::int8_t> payload, const QuantParams& p);

/// Asymmetric activation params over [min, max] widened to contain 0.
QuantParams activation_params(double min, double max);
/// Symmetric weight params: scale = max|w| / 127, zero point 0.
QuantParams weight_params(std::span<const float> weights);

struct Range {
    double min = 0.0;
    double max = 0.0;
    bool seen = false;

    void update(std::span<const float> values);
    friend bool operator==(const Range&, const Range&) = default;
};

/// Running min/max of the graph input and every op output.
struct Calibration {
    Range input;
    std::vector<Range> ops;
    std::size_t frames = 0;
};

class Calibrator {
public:
    explicit Calibrator(const det::InferenceGraph& graph);
    void add(const Image16& frame);
    const Calibration& result() const { return calib_; }

private:
    const det::InferenceGraph* graph_;
    Calibration calib_;
};

/// Throws DataError when `frames` is empty.
Calibration calibrate(const det::InferenceGraph& graph, std::span<const Image16> frames);

/// Integer counterpart of one graph op.
struct QuantOp {
    det::OpKind kind = det::OpKind::Conv;
    std::string name;
    int input = -1;
    int input2 = -1;
    int stride = 1;
    bool relu6 = false;
    std::size_t out_channels = 0;
    nn::Shape weight_shape;
    std::vector<std::int8_t> weights;
    std::vector<std::int32_t> bias;  // scale = input scale x weight scale
    QuantParams weight_params;
    QuantParams output;

    friend bool operator==(const QuantOp&, const QuantOp&) = default;
};

struct QuantizedModel {
    det::ModelConfig config;
    TrackingMode tracking_mode = TrackingMode::RateTrack;
    QuantParams input;
    std::vector<QuantOp> ops;
    std::vector<int> outputs;

    friend bool operator==(const QuantizedModel&, const QuantizedModel&) = default;
};

struct TensorReport {
    std::string name;
    double scale = 0.0;
    int zero_point = 0;
    double snr_db = 0.0;  // +inf when the tensor is reproduced exactly
    double max_abs_error = 0.0;
};

struct ConversionReport {
    std::vector<TensorReport> tensors;
};

/// Per-tensor int8 conversion of a folded graph. Throws DataError when any
/// activation lacks a calibrated range.
QuantizedModel convert_model(const det::InferenceGraph& graph, const Calibration& calibration,
                             ConversionReport* report = nullptr);

/// Integer inference: int8 operands, int32 accumulation, fixed-point
/// requantization between ops.
class QuantizedDetector {
public:
    explicit QuantizedDetector(QuantizedModel model);
    ~QuantizedDetector();
    QuantizedDetector(QuantizedDetector&&) noexcept;
    QuantizedDetector& operator=(QuantizedDetector&&) noexcept;

    std::vector<Detection> detect(const Image16& image, const det::DetectOptions& options = {}) const;
    /// Dequantized per-anchor rows (dx, dy, dw, dh, logit).
    std::vector<float> predict(const Image16& image) const;

    const QuantizedModel& model() const { return model_; }

private:
    struct Prepared;
    QuantizedModel model_;
    std::vector<Prepared> prepared_;
    std::vector<int> last_use_;
    std::vector<det::Anchor> anchors_;
};

/// Fixed-point multiplier: real ~= multiplier * 2^-shift with multiplier in
/// [2^30, 2^31).
struct Requant {
    std::int32_t multiplier = 0;
    int shift = 0;
};
Requant make_requant(double real_multiplier);
std::int32_t apply_requant(std::int64_t acc, const Requant& r);

void save_quantized(const QuantizedModel& model, const std::filesystem::path& path);
QuantizedModel load_quantized(const std::filesystem::path& path);

std::string conversion_report_table(const ConversionReport& report);

} // namespace satdet::quant
