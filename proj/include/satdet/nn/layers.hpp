#pragma once

#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "satdet/nn/ops.hpp"
#include "satdet/rng.hpp"

namespace satdet::nn {

struct Param {
    std::string name;
    Tensor value;
    Tensor grad;

    void zero_grad() { grad = Tensor(value.shape()); }
};

class TapeError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Reverse-pass record: every layer forward pushes one entry, and the
/// matching backward pops it. Entries are checked against their owner so a
/// backward run against a different graph fails loudly.
class Tape {
public:
    void push(const void* owner, std::vector<Tensor> saved);
    std::vector<Tensor> pop(const void* owner);
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    void clear() { entries_.clear(); }

private:
    struct Entry {
        const void* owner;
        std::vector<Tensor> saved;
    };
    std::vector<Entry> entries_;
};

enum class LayerKind { Conv2D, DepthwiseConv2D, InvertedResidual, ReLU6, ChannelAffine };

class Conv2D {
public:
    Conv2D() = default;
    Conv2D(std::string name, std::size_t in_channels, std::size_t out_channels, std::size_t kernel, int stride,
           Padding padding, bool with_bias);

    Tensor forward(const Tensor& x, Tape* tape) const;
    Tensor backward(const Tensor& dy, Tape& tape);
    void init(Rng& rng, double gain = 2.0);
    void collect(std::vector<Param*>& out);

    const Param& weight() const { return weight_; }
    const std::optional<Param>& bias() const { return bias_; }
    Param& weight() { return weight_; }
    std::optional<Param>& bias() { return bias_; }
    int stride() const { return stride_; }
    Padding padding() const { return padding_; }

private:
    Param weight_;
    std::optional<Param> bias_;
    int stride_ = 1;
    Padding padding_ = Padding::Same;
};

class DepthwiseConv2D {
public:
    DepthwiseConv2D() = default;
    DepthwiseConv2D(std::string name, std::size_t channels, std::size_t kernel, int stride, Padding padding,
                    bool with_bias);

    Tensor forward(const Tensor& x, Tape* tape) const;
    Tensor backward(const Tensor& dy, Tape& tape);
    void init(Rng& rng, double gain = 2.0);
    void collect(std::vector<Param*>& out);

    const Param& weight() const { return weight_; }
    const std::optional<Param>& bias() const { return bias_; }
    Param& weight() { return weight_; }
    std::optional<Param>& bias() { return bias_; }
    int stride() const { return stride_; }
    Padding padding() const { return padding_; }

private:
    Param weight_;
    std::optional<Param> bias_;
    int stride_ = 1;
    Padding padding_ = Padding::Same;
};

/// Inference-folded normalisation: learned per-channel scale and shift.
class ChannelAffine {
public:
    ChannelAffine() = default;
    ChannelAffine(std::string name, std::size_t channels);

    Tensor forward(const Tensor& x, Tape* tape) const;
    Tensor backward(const Tensor& dy, Tape& tape);
    void collect(std::vector<Param*>& out);

    const Param& scale() const { return scale_; }
    const Param& shift() const { return shift_; }
    Param& scale() { return scale_; }
    Param& shift() { return shift_; }

private:
    Param scale_;
    Param shift_;
};

class ReLU6 {
public:
    Tensor forward(const Tensor& x, Tape* tape) const;
    Tensor backward(const Tensor& dy, Tape& tape);
};

struct BlockSpec {
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t expansion = 1;
    int stride = 1;

    friend bool operator==(const BlockSpec&, const BlockSpec&) = default;
};

/// MobileNetV2 bottleneck: 1x1 expand -> ReLU6 -> 3x3 depthwise -> ReLU6 ->
/// 1x1 linear projection, each conv followed by a channel affine, with an
/// identity skip when stride is 1 and the channel count is unchanged. The
/// expand stage is omitted when the expansion factor is 1.
class InvertedResidual {
public:
    InvertedResidual() = default;
    InvertedResidual(std::string name, const BlockSpec& spec);

    Tensor forward(const Tensor& x, Tape* tape) const;
    Tensor backward(const Tensor& dy, Tape& tape);
    void init(Rng& rng);
    void collect(std::vector<Param*>& out);

    const BlockSpec& spec() const { return spec_; }
    bool has_expand() const { return spec_.expansion > 1; }
    bool has_skip() const { return spec_.stride == 1 && spec_.in_channels == spec_.out_channels; }

    const Conv2D& expand() const { return expand_; }
    const ChannelAffine& expand_affine() const { return expand_affine_; }
    const DepthwiseConv2D& depthwise() const { return depthwise_; }
    const ChannelAffine& depthwise_affine() const { return depthwise_affine_; }
    const Conv2D& project() const { return project_; }
    const ChannelAffine& project_affine() const { return project_affine_; }
    Conv2D& expand() { return expand_; }
    ChannelAffine& expand_affine() { return expand_affine_; }
    DepthwiseConv2D& depthwise() { return depthwise_; }
    ChannelAffine& depthwise_affine() { return depthwise_affine_; }
    Conv2D& project() { return project_; }
    ChannelAffine& project_affine() { return project_affine_; }

private:
    BlockSpec spec_;
    Conv2D expand_;
    ChannelAffine expand_affine_;
    ReLU6 expand_act_;
    DepthwiseConv2D depthwise_;
    ChannelAffine depthwise_affine_;
    ReLU6 depthwise_act_;
    Conv2D project_;
    ChannelAffine project_affine_;
};

} // namespace satdet::nn
