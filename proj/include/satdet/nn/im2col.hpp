#pragma once

#include <cstddef>

#include "satdet/nn/ops.hpp"

namespace satdet::nn {

/// Unfolds one C x H x W plane into a (C*kh*kw) x (out_h*out_w) matrix.
/// Out-of-image taps take `pad_value` (the representation of zero).
template <typename T>
void im2col(const T* x, std::size_t channels, std::size_t height, std::size_t width, std::size_t kernel_h,
            std::size_t kernel_w, int stride, const ConvGeometry& g, T pad_value, T* col) {
    const std::size_t plane = g.out_h * g.out_w;
    const auto s = static_cast<std::ptrdiff_t>(stride);
    for (std::size_t c = 0; c < channels; ++c) {
        const T* xc = x + c * height * width;
        for (std::size_t ky = 0; ky < kernel_h; ++ky) {
            for (std::size_t kx = 0; kx < kernel_w; ++kx) {
                T* row = col + ((c * kernel_h + ky) * kernel_w + kx) * plane;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    T* dst = row + oy * g.out_w;
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * s + static_cast<std::ptrdiff_t>(ky) -
                                              static_cast<std::ptrdiff_t>(g.pad_top);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) {
                        for (std::size_t ox = 0; ox < g.out_w; ++ox) dst[ox] = pad_value;
                        continue;
                    }
                    const T* src = xc + static_cast<std::size_t>(iy) * width;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox) * s +
                                                  static_cast<std::ptrdiff_t>(kx) -
                                                  static_cast<std::ptrdiff_t>(g.pad_left);
                        dst[ox] = (ix >= 0 && ix < static_cast<std::ptrdiff_t>(width)) ? src[ix] : pad_value;
                    }
                }
            }
        }
    }
}

/// Valid output-column range [lo, hi) for which ox*stride + kx - pad_left
/// lands inside [0, width).
inline void tap_range(std::size_t kx, std::size_t pad_left, int stride, std::size_t width, std::size_t out_w,
                      std::size_t& lo, std::size_t& hi) {
    const auto s = static_cast<std::ptrdiff_t>(stride);
    const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(pad_left) - static_cast<std::ptrdiff_t>(kx);
    lo = shift > 0 ? static_cast<std::size_t>((shift + s - 1) / s) : 0;
    const std::ptrdiff_t last = static_cast<std::ptrdiff_t>(width) - 1 + shift;
    if (last < 0) {
        lo = hi = 0;
        return;
    }
    hi = std::min(out_w, static_cast<std::size_t>(last / s + 1));
    if (lo > hi) lo = hi;
}

} // namespace satdet::nn
