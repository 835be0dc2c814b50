#include "satdet/nn/ops.hpp"

#include <algorithm>
#include <vector>

#include "satdet/nn/im2col.hpp"

namespace satdet::nn {
namespace {

constexpr std::size_t kTileP = 256;

// C[M x P] += A[M x K] * B[K x P], all row-major and contiguous.
template <typename T>
void gemm_acc(std::size_t m_rows, std::size_t k_dim, std::size_t p_cols, const T* a, const T* b, T* c) {
    for (std::size_t p0 = 0; p0 < p_cols; p0 += kTileP) {
        const std::size_t pe = std::min(p_cols, p0 + kTileP);
        for (std::size_t m = 0; m < m_rows; ++m) {
            T* crow = c + m * p_cols;
            for (std::size_t k = 0; k < k_dim; ++k) {
                const T av = a[m * k_dim + k];
                const T* brow = b + k * p_cols;
                for (std::size_t p = p0; p < pe; ++p) crow[p] += av * brow[p];
            }
        }
    }
}

double dot(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
#pragma omp simd reduction(+ : s)
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

double sum(const double* a, std::size_t n) {
    double s = 0.0;
#pragma omp simd reduction(+ : s)
    for (std::size_t i = 0; i < n; ++i) s += a[i];
    return s;
}

void col2im_acc(const double* col, std::size_t channels, std::size_t height, std::size_t width, std::size_t kh,
                std::size_t kw, int stride, const ConvGeometry& g, double* x) {
    const std::size_t plane = g.out_h * g.out_w;
    for (std::size_t c = 0; c < channels; ++c) {
        double* xc = x + c * height * width;
        for (std::size_t ky = 0; ky < kh; ++ky) {
            for (std::size_t kx = 0; kx < kw; ++kx) {
                const double* row = col + ((c * kh + ky) * kw + kx) * plane;
                std::size_t lo = 0, hi = 0;
                tap_range(kx, g.pad_left, stride, width, g.out_w, lo, hi);
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                              static_cast<std::ptrdiff_t>(g.pad_top);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(height)) continue;
                    const std::ptrdiff_t base = iy * static_cast<std::ptrdiff_t>(width) +
                                                static_cast<std::ptrdiff_t>(kx) -
                                                static_cast<std::ptrdiff_t>(g.pad_left);
                    const double* src = row + oy * g.out_w;
                    for (std::size_t ox = lo; ox < hi; ++ox)
                        xc[base + static_cast<std::ptrdiff_t>(ox) * stride] += src[ox];
                }
            }
        }
    }
}

void check_stride(int stride) {
    if (stride != 1 && stride != 2) {
        throw ShapeError("stride must be 1 or 2, got " + std::to_string(stride));
    }
}

template <typename T>
void check_conv(const BasicTensor<T>& x, const BasicTensor<T>& w, std::size_t bias_size, int stride) {
    require_rank4(x.shape(), "conv2d input");
    require_rank4(w.shape(), "conv2d weights");
    check_stride(stride);
    if (x.dim(1) != w.dim(1)) {
        throw ShapeError("conv2d: input " + shape_string(x.shape()) + " has " + std::to_string(x.dim(1)) +
                         " channels but weights " + shape_string(w.shape()) + " expect " +
                         std::to_string(w.dim(1)));
    }
    if (bias_size != 0 && bias_size != w.dim(0)) {
        throw ShapeError("conv2d: bias length " + std::to_string(bias_size) + " does not match weights " +
                         shape_string(w.shape()));
    }
}

template <typename T>
void check_depthwise(const BasicTensor<T>& x, const BasicTensor<T>& w, std::size_t bias_size, int stride) {
    require_rank4(x.shape(), "depthwise input");
    require_rank4(w.shape(), "depthwise weights");
    check_stride(stride);
    if (w.dim(0) != x.dim(1) || w.dim(1) != 1) {
        throw ShapeError("depthwise: input " + shape_string(x.shape()) + " needs weights [" +
                         std::to_string(x.dim(1)) + "x1xkhxkw], got " + shape_string(w.shape()));
    }
    if (bias_size != 0 && bias_size != w.dim(0)) {
        throw ShapeError("depthwise: bias length " + std::to_string(bias_size) + " does not match weights " +
                         shape_string(w.shape()));
    }
}

bool is_pointwise(const Shape& w, int stride) { return w[2] == 1 && w[3] == 1 && stride == 1; }

} // namespace

ConvGeometry conv_geometry(std::size_t in_h, std::size_t in_w, std::size_t kernel_h, std::size_t kernel_w,
                           int stride, Padding padding) {
    check_stride(stride);
    const auto s = static_cast<std::size_t>(stride);
    ConvGeometry g;
    if (padding == Padding::Same) {
        g.out_h = (in_h + s - 1) / s;
        g.out_w = (in_w + s - 1) / s;
        const std::size_t need_h = (g.out_h - 1) * s + kernel_h;
        const std::size_t need_w = (g.out_w - 1) * s + kernel_w;
        g.pad_top = need_h > in_h ? (need_h - in_h) / 2 : 0;
        g.pad_left = need_w > in_w ? (need_w - in_w) / 2 : 0;
    } else {
        if (in_h < kernel_h || in_w < kernel_w) {
            throw ShapeError("valid convolution: input " + std::to_string(in_h) + "x" + std::to_string(in_w) +
                             " is smaller than kernel " + std::to_string(kernel_h) + "x" +
                             std::to_string(kernel_w));
        }
        g.out_h = (in_h - kernel_h) / s + 1;
        g.out_w = (in_w - kernel_w) / s + 1;
    }
    return g;
}

template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& x, const BasicTensor<T>& w, std::span<const T> bias,
                              int stride, Padding padding) {
    check_conv(x, w, bias.size(), stride);
    const std::size_t n_batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const ConvGeometry g = conv_geometry(h, wd, kh, kw, stride, padding);
    const std::size_t k_dim = cin * kh * kw;
    const std::size_t plane = g.out_h * g.out_w;
    const bool direct = is_pointwise(w.shape(), stride);

    BasicTensor<T> y({n_batch, cout, g.out_h, g.out_w});
    std::vector<T> col(direct ? 0 : k_dim * plane);
    for (std::size_t n = 0; n < n_batch; ++n) {
        const T* xn = x.ptr() + n * cin * h * wd;
        const T* src = xn;
        if (!direct) {
            im2col(xn, cin, h, wd, kh, kw, stride, g, T{0}, col.data());
            src = col.data();
        }
        T* yn = y.ptr() + n * cout * plane;
        if (!bias.empty()) {
            for (std::size_t co = 0; co < cout; ++co) std::fill_n(yn + co * plane, plane, bias[co]);
        }
        gemm_acc(cout, k_dim, plane, w.ptr(), src, yn);
    }
    return y;
}

template <typename T>
BasicTensor<T> depthwise_conv2d_forward(const BasicTensor<T>& x, const BasicTensor<T>& w, std::span<const T> bias,
                                        int stride, Padding padding) {
    check_depthwise(x, w, bias.size(), stride);
    const std::size_t n_batch = x.dim(0), ch = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::size_t kh = w.dim(2), kw = w.dim(3);
    const ConvGeometry g = conv_geometry(h, wd, kh, kw, stride, padding);
    BasicTensor<T> y({n_batch, ch, g.out_h, g.out_w});
    for (std::size_t n = 0; n < n_batch; ++n) {
        for (std::size_t c = 0; c < ch; ++c) {
            const T* xc = x.ptr() + (n * ch + c) * h * wd;
            T* yc = y.ptr() + (n * ch + c) * g.out_h * g.out_w;
            if (!bias.empty()) std::fill_n(yc, g.out_h * g.out_w, bias[c]);
            const T* wc = w.ptr() + c * kh * kw;
            for (std::size_t ky = 0; ky < kh; ++ky) {
                for (std::size_t kx = 0; kx < kw; ++kx) {
                    const T wv = wc[ky * kw + kx];
                    std::size_t lo = 0, hi = 0;
                    tap_range(kx, g.pad_left, stride, wd, g.out_w, lo, hi);
                    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                                  static_cast<std::ptrdiff_t>(g.pad_top);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                        const std::ptrdiff_t base = iy * static_cast<std::ptrdiff_t>(wd) +
                                                    static_cast<std::ptrdiff_t>(kx) -
                                                    static_cast<std::ptrdiff_t>(g.pad_left);
                        const T* src = xc + base + static_cast<std::ptrdiff_t>(lo) * stride;
                        T* dst = yc + oy * g.out_w + lo;
                        const std::size_t count = hi - lo;
                        if (stride == 1) {
                            for (std::size_t i = 0; i < count; ++i) dst[i] += wv * src[i];
                        } else {
                            for (std::size_t i = 0; i < count; ++i) dst[i] += wv * src[2 * i];
                        }
                    }
                }
            }
        }
    }
    return y;
}

template <typename T>
BasicTensor<T> relu6_forward(const BasicTensor<T>& x) {
    BasicTensor<T> y = x;
    for (T& v : y.data()) v = std::min(std::max(v, T{0}), T{6});
    return y;
}

template <typename T>
BasicTensor<T> channel_affine_forward(const BasicTensor<T>& x, std::span<const T> scale, std::span<const T> shift) {
    require_rank4(x.shape(), "channel affine input");
    const std::size_t ch = x.dim(1);
    if (scale.size() != ch || shift.size() != ch) {
        throw ShapeError("channel affine: input " + shape_string(x.shape()) + " vs scale/shift length " +
                         std::to_string(scale.size()) + "/" + std::to_string(shift.size()));
    }
    const std::size_t plane = x.dim(2) * x.dim(3);
    BasicTensor<T> y(x.shape());
    for (std::size_t n = 0; n < x.dim(0); ++n) {
        for (std::size_t c = 0; c < ch; ++c) {
            const T* src = x.ptr() + (n * ch + c) * plane;
            T* dst = y.ptr() + (n * ch + c) * plane;
            const T a = scale[c], b = shift[c];
            for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] * a + b;
        }
    }
    return y;
}

template <typename T>
BasicTensor<T> add_forward(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    require_same_shape(a.shape(), b.shape(), "add");
    BasicTensor<T> y = a;
    const T* src = b.ptr();
    T* dst = y.ptr();
    for (std::size_t i = 0; i < y.size(); ++i) dst[i] += src[i];
    return y;
}

ConvGrads conv2d_backward(const Tensor& x, const Tensor& w, bool has_bias, int stride, Padding padding,
                          const Tensor& dy) {
    check_conv(x, w, 0, stride);
    const std::size_t n_batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const ConvGeometry g = conv_geometry(h, wd, kh, kw, stride, padding);
    require_same_shape(dy.shape(), {n_batch, cout, g.out_h, g.out_w}, "conv2d backward dy");
    const std::size_t k_dim = cin * kh * kw;
    const std::size_t plane = g.out_h * g.out_w;
    const bool direct = is_pointwise(w.shape(), stride);

    ConvGrads grads{Tensor(x.shape()), Tensor(w.shape()), has_bias ? Tensor({cout}) : Tensor()};
    // W^T so the input gradient is the same row-streaming GEMM as the forward.
    std::vector<double> wt(k_dim * cout);
    for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t k = 0; k < k_dim; ++k) wt[k * cout + co] = w[co * k_dim + k];

    std::vector<double> col(direct ? 0 : k_dim * plane);
    std::vector<double> dcol(direct ? 0 : k_dim * plane);
    for (std::size_t n = 0; n < n_batch; ++n) {
        const double* xn = x.ptr() + n * cin * h * wd;
        const double* src = xn;
        if (!direct) {
            im2col(xn, cin, h, wd, kh, kw, stride, g, 0.0, col.data());
            src = col.data();
        }
        const double* dyn = dy.ptr() + n * cout * plane;
        for (std::size_t co = 0; co < cout; ++co) {
            const double* drow = dyn + co * plane;
            if (has_bias) grads.dbias[co] += sum(drow, plane);
            double* dwrow = grads.dweights.ptr() + co * k_dim;
            for (std::size_t k = 0; k < k_dim; ++k) dwrow[k] += dot(drow, src + k * plane, plane);
        }
        double* dxn = grads.dx.ptr() + n * cin * h * wd;
        if (direct) {
            gemm_acc(k_dim, cout, plane, wt.data(), dyn, dxn);
        } else {
            std::fill(dcol.begin(), dcol.end(), 0.0);
            gemm_acc(k_dim, cout, plane, wt.data(), dyn, dcol.data());
            col2im_acc(dcol.data(), cin, h, wd, kh, kw, stride, g, dxn);
        }
    }
    return grads;
}

ConvGrads depthwise_conv2d_backward(const Tensor& x, const Tensor& w, bool has_bias, int stride, Padding padding,
                                    const Tensor& dy) {
    check_depthwise(x, w, 0, stride);
    const std::size_t n_batch = x.dim(0), ch = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::size_t kh = w.dim(2), kw = w.dim(3);
    const ConvGeometry g = conv_geometry(h, wd, kh, kw, stride, padding);
    require_same_shape(dy.shape(), {n_batch, ch, g.out_h, g.out_w}, "depthwise backward dy");
    ConvGrads grads{Tensor(x.shape()), Tensor(w.shape()), has_bias ? Tensor({ch}) : Tensor()};
    const std::size_t plane = g.out_h * g.out_w;
    for (std::size_t n = 0; n < n_batch; ++n) {
        for (std::size_t c = 0; c < ch; ++c) {
            const double* xc = x.ptr() + (n * ch + c) * h * wd;
            double* dxc = grads.dx.ptr() + (n * ch + c) * h * wd;
            const double* dyc = dy.ptr() + (n * ch + c) * plane;
            if (has_bias) grads.dbias[c] += sum(dyc, plane);
            const double* wc = w.ptr() + c * kh * kw;
            double* dwc = grads.dweights.ptr() + c * kh * kw;
            for (std::size_t ky = 0; ky < kh; ++ky) {
                for (std::size_t kx = 0; kx < kw; ++kx) {
                    const double wv = wc[ky * kw + kx];
                    std::size_t lo = 0, hi = 0;
                    tap_range(kx, g.pad_left, stride, wd, g.out_w, lo, hi);
                    double acc = 0.0;
                    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                        const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                                  static_cast<std::ptrdiff_t>(g.pad_top);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                        const std::ptrdiff_t base = iy * static_cast<std::ptrdiff_t>(wd) +
                                                    static_cast<std::ptrdiff_t>(kx) -
                                                    static_cast<std::ptrdiff_t>(g.pad_left) +
                                                    static_cast<std::ptrdiff_t>(lo) * stride;
                        const double* src = xc + base;
                        double* dst = dxc + base;
                        const double* drow = dyc + oy * g.out_w + lo;
                        const std::size_t s = static_cast<std::size_t>(stride);
                        const std::size_t count = hi - lo;
                        double part = 0.0;
#pragma omp simd reduction(+ : part)
                        for (std::size_t i = 0; i < count; ++i) part += drow[i] * src[i * s];
                        acc += part;
                        for (std::size_t i = 0; i < count; ++i) dst[i * s] += wv * drow[i];
                    }
                    dwc[ky * kw + kx] += acc;
                }
            }
        }
    }
    return grads;
}

Tensor relu6_backward(const Tensor& x, const Tensor& dy) {
    require_same_shape(x.shape(), dy.shape(), "relu6 backward");
    Tensor dx(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] = (x[i] > 0.0 && x[i] < 6.0) ? dy[i] : 0.0;
    return dx;
}

AffineGrads channel_affine_backward(const Tensor& x, std::span<const double> scale, const Tensor& dy) {
    require_same_shape(x.shape(), dy.shape(), "channel affine backward");
    const std::size_t ch = x.dim(1);
    if (scale.size() != ch) {
        throw ShapeError("channel affine backward: scale length " + std::to_string(scale.size()) +
                         " vs input " + shape_string(x.shape()));
    }
    const std::size_t plane = x.dim(2) * x.dim(3);
    AffineGrads g{Tensor(x.shape()), Tensor({ch}), Tensor({ch})};
    for (std::size_t n = 0; n < x.dim(0); ++n) {
        for (std::size_t c = 0; c < ch; ++c) {
            const double* xs = x.ptr() + (n * ch + c) * plane;
            const double* ds = dy.ptr() + (n * ch + c) * plane;
            double* dx = g.dx.ptr() + (n * ch + c) * plane;
            g.dscale[c] += dot(xs, ds, plane);
            g.dshift[c] += sum(ds, plane);
            const double a = scale[c];
            for (std::size_t i = 0; i < plane; ++i) dx[i] = ds[i] * a;
        }
    }
    return g;
}

#define SATDET_INSTANTIATE(T)                                                                                   \
    template BasicTensor<T> conv2d_forward(const BasicTensor<T>&, const BasicTensor<T>&, std::span<const T>, int, \
                                           Padding);                                                            \
    template BasicTensor<T> depthwise_conv2d_forward(const BasicTensor<T>&, const BasicTensor<T>&,              \
                                                     std::span<const T>, int, Padding);                         \
    template BasicTensor<T> relu6_forward(const BasicTensor<T>&);                                               \
    template BasicTensor<T> channel_affine_forward(const BasicTensor<T>&, std::span<const T>, std::span<const T>); \
    template BasicTensor<T> add_forward(const BasicTensor<T>&, const BasicTensor<T>&);

SATDET_INSTANTIATE(float)
SATDET_INSTANTIATE(double)
#undef SATDET_INSTANTIATE

} // namespace satdet::nn
