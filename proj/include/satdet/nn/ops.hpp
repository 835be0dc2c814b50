#pragma once

#include <span>

#include "satdet/nn/tensor.hpp"

namespace satdet::nn {

enum class Padding { Same, Valid };

/// Output extent and leading padding of a strided window. Same padding
/// gives ceil(in / stride) outputs with the extra pad on the trailing edge;
/// valid gives floor((in - k) / stride) + 1.
struct ConvGeometry {
    std::size_t out_h = 0;
    std::size_t out_w = 0;
    std::size_t pad_top = 0;
    std::size_t pad_left = 0;
};

ConvGeometry conv_geometry(std::size_t in_h, std::size_t in_w, std::size_t kernel_h, std::size_t kernel_w,
                           int stride, Padding padding);

/// Cross-correlation. x: [N, Cin, H, W], weights: [Cout, Cin, kh, kw],
/// bias: empty or Cout values.
template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& x, const BasicTensor<T>& weights, std::span<const T> bias,
                              int stride, Padding padding);

/// One k x k filter per channel. weights: [C, 1, kh, kw].
template <typename T>
BasicTensor<T> depthwise_conv2d_forward(const BasicTensor<T>& x, const BasicTensor<T>& weights,
                                        std::span<const T> bias, int stride, Padding padding);

template <typename T>
BasicTensor<T> relu6_forward(const BasicTensor<T>& x);

/// y[n, c] = x[n, c] * scale[c] + shift[c]
template <typename T>
BasicTensor<T> channel_affine_forward(const BasicTensor<T>& x, std::span<const T> scale, std::span<const T> shift);

template <typename T>
BasicTensor<T> add_forward(const BasicTensor<T>& a, const BasicTensor<T>& b);

struct ConvGrads {
    Tensor dx;
    Tensor dweights;
    Tensor dbias;  // empty when the layer has no bias
};

ConvGrads conv2d_backward(const Tensor& x, const Tensor& weights, bool has_bias, int stride, Padding padding,
                          const Tensor& dy);
ConvGrads depthwise_conv2d_backward(const Tensor& x, const Tensor& weights, bool has_bias, int stride,
                                    Padding padding, const Tensor& dy);
Tensor relu6_backward(const Tensor& x, const Tensor& dy);

struct AffineGrads {
    Tensor dx;
    Tensor dscale;
    Tensor dshift;
};
AffineGrads channel_affine_backward(const Tensor& x, std::span<const double> scale, const Tensor& dy);

} // namespace satdet::nn
