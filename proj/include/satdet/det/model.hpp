#pragma once

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include "satdet/det/anchors.hpp"
#include "satdet/geometry.hpp"
#include "satdet/nn/layers.hpp"
#include "satdet/rng.hpp"

namespace satdet::det {

enum class SizeClass { Small, Large };
enum class Precision { Float, Quantized };

std::string_view to_string(SizeClass size);
std::string_view to_string(Precision precision);
SizeClass parse_size_class(std::string_view text);
Precision parse_precision(std::string_view text);

/// Backbone, heads and anchors of one detector variant. head_taps[i] is the
/// index of the block whose output feeds head i.
struct ModelConfig {
    SizeClass size_class = SizeClass::Small;
    int input_h = 256;
    int input_w = 256;
    /// Fixed multiplier applied to the [0, 1] input before the stem.
    double input_gain = 64.0;
    std::size_t stem_channels = 16;
    std::vector<nn::BlockSpec> blocks;
    std::vector<std::size_t> head_taps;
    AnchorConfig anchors;

    /// Checks channel chaining, tap ordering and that each tap's stride
    /// matches its anchor map. Throws ConfigError.
    void validate() const;
    int tap_stride(std::size_t head) const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

ModelConfig small_model_config();
ModelConfig large_model_config();
ModelConfig model_config_for(SizeClass size);

/// Float detector used for training: stem conv (stride 2) + affine + ReLU6,
/// a stack of inverted residuals, and one 3x3 head per tap emitting
/// anchors_per_cell x (dx, dy, dw, dh, logit) channels.
class DetectorModel {
public:
    DetectorModel() = default;
    DetectorModel(ModelConfig config, TrackingMode mode);

    void init(std::uint64_t seed);

    /// x: [N, 1, input_h, input_w] in [0, 1]. Returns one map per head.
    std::vector<nn::Tensor> forward(const nn::Tensor& x, nn::Tape* tape) const;
    /// Accumulates parameter gradients from per-head output gradients.
    void backward(const std::vector<nn::Tensor>& head_grads, nn::Tape& tape);

    std::vector<nn::Param*> params();
    std::vector<const nn::Param*> params() const;
    void zero_grad();

    const ModelConfig& config() const { return config_; }
    TrackingMode tracking_mode() const { return mode_; }
    const std::vector<Anchor>& anchors() const { return anchors_; }

    const nn::Conv2D& stem() const { return stem_; }
    const nn::ChannelAffine& stem_affine() const { return stem_affine_; }
    const std::vector<nn::InvertedResidual>& blocks() const { return blocks_; }
    const std::vector<nn::Conv2D>& heads() const { return heads_; }

private:
    ModelConfig config_;
    TrackingMode mode_ = TrackingMode::RateTrack;
    std::vector<Anchor> anchors_;
    nn::Conv2D stem_;
    nn::ChannelAffine stem_affine_;
    nn::ReLU6 stem_act_;
    std::vector<nn::InvertedResidual> blocks_;
    std::vector<nn::Conv2D> heads_;
};

/// Head maps [N, A*5, h, w] -> per-image rows of 5 values in anchor order.
template <typename T>
std::vector<T> flatten_head_outputs(const std::vector<nn::BasicTensor<T>>& heads, const ModelConfig& config,
                                    std::size_t image);
/// Inverse scatter of flatten_head_outputs for one image of a batch.
void scatter_head_grads(std::span<const double> flat, const ModelConfig& config, std::size_t image,
                        std::vector<nn::Tensor>& head_grads);

/// Checkpoint at `path` (parameter container) plus `path` + ".json" sidecar.
void save_model(const DetectorModel& model, const std::filesystem::path& path);
DetectorModel load_model(const std::filesystem::path& path);

std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint);
/// Reads only the sidecar's "precision" field.
Precision checkpoint_precision(const std::filesystem::path& checkpoint);

} // namespace satdet::det
