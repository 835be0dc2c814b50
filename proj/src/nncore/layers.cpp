#include "satdet/nn/layers.hpp"

#include <cmath>

namespace satdet::nn {
namespace {

void he_normal(Tensor& w, std::size_t fan_in, double gain, Rng& rng) {
    std::normal_distribution<double> dist(0.0, std::sqrt(gain / static_cast<double>(fan_in)));
    for (double& v : w.data()) v = dist(rng);
}

void accumulate(Param& p, const Tensor& g) {
    if (p.grad.empty()) p.zero_grad();
    require_same_shape(p.grad.shape(), g.shape(), p.name.c_str());
    for (std::size_t i = 0; i < g.size(); ++i) p.grad[i] += g[i];
}

} // namespace

void Tape::push(const void* owner, std::vector<Tensor> saved) {
    entries_.push_back({owner, std::move(saved)});
}

std::vector<Tensor> Tape::pop(const void* owner) {
    if (entries_.empty()) {
        throw TapeError("tape/graph mismatch: backward called with an empty tape");
    }
    if (entries_.back().owner != owner) {
        throw TapeError("tape/graph mismatch: backward order does not mirror the recorded forward");
    }
    std::vector<Tensor> saved = std::move(entries_.back().saved);
    entries_.pop_back();
    return saved;
}

// ---- Conv2D ---------------------------------------------------------------

Conv2D::Conv2D(std::string name, std::size_t in_channels, std::size_t out_channels, std::size_t kernel, int stride,
               Padding padding, bool with_bias)
    : stride_(stride), padding_(padding) {
    weight_ = {name + ".weight", Tensor({out_channels, in_channels, kernel, kernel}), {}};
    if (with_bias) bias_ = Param{name + ".bias", Tensor({out_channels}), {}};
}

Tensor Conv2D::forward(const Tensor& x, Tape* tape) const {
    std::span<const double> b;
    if (bias_) b = bias_->value.data();
    Tensor y = conv2d_forward(x, weight_.value, b, stride_, padding_);
    if (tape) tape->push(this, {x});
    return y;
}

Tensor Conv2D::backward(const Tensor& dy, Tape& tape) {
    auto saved = tape.pop(this);
    ConvGrads g = conv2d_backward(saved[0], weight_.value, bias_.has_value(), stride_, padding_, dy);
    accumulate(weight_, g.dweights);
    if (bias_) accumulate(*bias_, g.dbias);
    return std::move(g.dx);
}

void Conv2D::init(Rng& rng, double gain) {
    const auto& s = weight_.value.shape();
    he_normal(weight_.value, s[1] * s[2] * s[3], gain, rng);
    if (bias_) bias_->value.fill(0.0);
}

void Conv2D::collect(std::vector<Param*>& out) {
    out.push_back(&weight_);
    if (bias_) out.push_back(&*bias_);
}

// ---- DepthwiseConv2D ------------------------------------------------------

DepthwiseConv2D::DepthwiseConv2D(std::string name, std::size_t channels, std::size_t kernel, int stride,
                                 Padding padding, bool with_bias)
    : stride_(stride), padding_(padding) {
    weight_ = {name + ".weight", Tensor({channels, 1, kernel, kernel}), {}};
    if (with_bias) bias_ = Param{name + ".bias", Tensor({channels}), {}};
}

Tensor DepthwiseConv2D::forward(const Tensor& x, Tape* tape) const {
    std::span<const double> b;
    if (bias_) b = bias_->value.data();
    Tensor y = depthwise_conv2d_forward(x, weight_.value, b, stride_, padding_);
    if (tape) tape->push(this, {x});
    return y;
}

Tensor DepthwiseConv2D::backward(const Tensor& dy, Tape& tape) {
    auto saved = tape.pop(this);
    ConvGrads g = depthwise_conv2d_backward(saved[0], weight_.value, bias_.has_value(), stride_, padding_, dy);
    accumulate(weight_, g.dweights);
    if (bias_) accumulate(*bias_, g.dbias);
    return std::move(g.dx);
}

void DepthwiseConv2D::init(Rng& rng, double gain) {
    const auto& s = weight_.value.shape();
    he_normal(weight_.value, s[2] * s[3], gain, rng);
    if (bias_) bias_->value.fill(0.0);
}

void DepthwiseConv2D::collect(std::vector<Param*>& out) {
    out.push_back(&weight_);
    if (bias_) out.push_back(&*bias_);
}

// ---- ChannelAffine --------------------------------------------------------

ChannelAffine::ChannelAffine(std::string name, std::size_t channels) {
    scale_ = {name + ".scale", Tensor({channels}, 1.0), {}};
    shift_ = {name + ".shift", Tensor({channels}, 0.0), {}};
}

Tensor ChannelAffine::forward(const Tensor& x, Tape* tape) const {
    Tensor y = channel_affine_forward<double>(x, scale_.value.data(), shift_.value.data());
    if (tape) tape->push(this, {x});
    return y;
}

Tensor ChannelAffine::backward(const Tensor& dy, Tape& tape) {
    auto saved = tape.pop(this);
    AffineGrads g = channel_affine_backward(saved[0], scale_.value.data(), dy);
    accumulate(scale_, g.dscale);
    accumulate(shift_, g.dshift);
    return std::move(g.dx);
}

void ChannelAffine::collect(std::vector<Param*>& out) {
    out.push_back(&scale_);
    out.push_back(&shift_);
}

// ---- ReLU6 ----------------------------------------------------------------

Tensor ReLU6::forward(const Tensor& x, Tape* tape) const {
    Tensor y = relu6_forward(x);
    if (tape) tape->push(this, {x});
    return y;
}

Tensor ReLU6::backward(const Tensor& dy, Tape& tape) {
    auto saved = tape.pop(this);
    return relu6_backward(saved[0], dy);
}

// ---- InvertedResidual -----------------------------------------------------

InvertedResidual::InvertedResidual(std::string name, const BlockSpec& spec) : spec_(spec) {
    if (spec.stride != 1 && spec.stride != 2) {
        throw ShapeError(name + ": stride must be 1 or 2");
    }
    if (spec.expansion < 1 || spec.in_channels == 0 || spec.out_channels == 0) {
        throw ShapeError(name + ": expansion factor and channel counts must be >= 1");
    }
    const std::size_t hidden = spec.in_channels * spec.expansion;
    if (has_expand()) {
        expand_ = Conv2D(name + ".expand", spec.in_channels, hidden, 1, 1, Padding::Same, false);
        expand_affine_ = ChannelAffine(name + ".expand_affine", hidden);
    }
    depthwise_ = DepthwiseConv2D(name + ".depthwise", hidden, 3, spec.stride, Padding::Same, false);
    depthwise_affine_ = ChannelAffine(name + ".depthwise_affine", hidden);
    project_ = Conv2D(name + ".project", hidden, spec.out_channels, 1, 1, Padding::Same, false);
    project_affine_ = ChannelAffine(name + ".project_affine", spec.out_channels);
}

Tensor InvertedResidual::forward(const Tensor& x, Tape* tape) const {
    Tensor h = x;
    if (has_expand()) {
        h = expand_act_.forward(expand_affine_.forward(expand_.forward(h, tape), tape), tape);
    }
    h = depthwise_act_.forward(depthwise_affine_.forward(depthwise_.forward(h, tape), tape), tape);
    h = project_affine_.forward(project_.forward(h, tape), tape);
    if (has_skip()) {
        return add_forward(h, x);
    }
    return h;
}

Tensor InvertedResidual::backward(const Tensor& dy, Tape& tape) {
    Tensor g = project_.backward(project_affine_.backward(dy, tape), tape);
    g = depthwise_.backward(depthwise_affine_.backward(depthwise_act_.backward(g, tape), tape), tape);
    if (has_expand()) {
        g = expand_.backward(expand_affine_.backward(expand_act_.backward(g, tape), tape), tape);
    }
    if (has_skip()) {
        return add_forward(g, dy);
    }
    return g;
}

void InvertedResidual::init(Rng& rng) {
    if (has_expand()) expand_.init(rng);
    depthwise_.init(rng);
    // Linear bottleneck: no rectifier follows the projection.
    project_.init(rng, 1.0);
}

void InvertedResidual::collect(std::vector<Param*>& out) {
    if (has_expand()) {
        expand_.collect(out);
        expand_affine_.collect(out);
    }
    depthwise_.collect(out);
    depthwise_affine_.collect(out);
    project_.collect(out);
    project_affine_.collect(out);
}

} // namespace satdet::nn
