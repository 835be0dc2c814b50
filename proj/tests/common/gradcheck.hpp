#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "satdet/nn/layers.hpp"

namespace satdet::testutil {

/// Relative error between two gradient vectors: ||a - n|| / max(||a|| + ||n||, 1e-12).
inline double relative_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
        na += analytic[i] * analytic[i];
        nn += numeric[i] * numeric[i];
    }
    return std::sqrt(diff) / std::max(std::sqrt(na) + std::sqrt(nn), 1e-12);
}

inline nn::Tensor random_tensor(nn::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    nn::Tensor t(std::move(shape));
    std::uniform_real_distribution<double> d(lo, hi);
    for (double& v : t.data()) v = d(rng);
    return t;
}

struct GradCheckResult {
    std::string what;
    double rel_error = 0.0;
};

/// Central-difference check of a layer under the scalar loss sum(r * f(x)),
/// with r a fixed random tensor. Checks d/dx and d/dparam for every param.
template <typename Layer>
std::vector<GradCheckResult> check_layer(Layer& layer, std::vector<nn::Param*> params, nn::Tensor x,
                                         std::mt19937_64& rng, double eps = 1e-5) {
    nn::Tensor probe;
    auto loss = [&](const nn::Tensor& in) {
        const nn::Tensor y = layer.forward(in, nullptr);
        if (probe.empty()) probe = random_tensor(y.shape(), rng);
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += probe[i] * y[i];
        return s;
    };
    (void)loss(x);

    for (nn::Param* p : params) p->zero_grad();
    nn::Tape tape;
    (void)layer.forward(x, &tape);
    const nn::Tensor dx = layer.backward(probe, tape);

    std::vector<GradCheckResult> out;
    {
        std::vector<double> a(dx.data().begin(), dx.data().end()), n(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double keep = x[i];
            x[i] = keep + eps;
            const double up = loss(x);
            x[i] = keep - eps;
            const double down = loss(x);
            x[i] = keep;
            n[i] = (up - down) / (2 * eps);
        }
        out.push_back({"input", relative_error(a, n)});
    }
    for (nn::Param* p : params) {
        std::vector<double> a(p->grad.data().begin(), p->grad.data().end()), n(p->value.size());
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double keep = p->value[i];
            p->value[i] = keep + eps;
            const double up = loss(x);
            p->value[i] = keep - eps;
            const double down = loss(x);
            p->value[i] = keep;
            n[i] = (up - down) / (2 * eps);
        }
        out.push_back({p->name, relative_error(a, n)});
    }
    return out;
}

/// Inputs kept at least `margin` away from the ReLU6 kinks at 0 and 6.
inline nn::Tensor kink_free(nn::Tensor t, double margin = 1e-3) {
    for (double& v : t.data()) {
        if (std::abs(v) < margin) v = v < 0 ? -margin * 2 : margin * 2;
        if (std::abs(v - 6.0) < margin) v = v < 6.0 ? 6.0 - 2 * margin : 6.0 + 2 * margin;
    }
    return t;
}

/// Small random affine so that gradient checks exercise non-trivial scale/shift.
inline void randomize_affine(nn::ChannelAffine& a, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> s(0.5, 1.5), b(-0.3, 0.3);
    for (double& v : a.scale().value.data()) v = s(rng);
    for (double& v : a.shift().value.data()) v = b(rng);
}

inline void randomize_block(nn::InvertedResidual& blk, std::mt19937_64& rng) {
    blk.init(rng);
    if (blk.has_expand()) randomize_affine(blk.expand_affine(), rng);
    randomize_affine(blk.depthwise_affine(), rng);
    randomize_affine(blk.project_affine(), rng);
}

/// One gradient check per layer kind, as used by the numerical-core tests.
inline std::vector<GradCheckResult> check_all_layer_kinds(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<GradCheckResult> all;
    auto tag = [&](const std::string& kind, std::vector<GradCheckResult> rs) {
        for (auto& r : rs) all.push_back({kind + ":" + r.what, r.rel_error});
    };
    for (int stride : {1, 2}) {
        for (nn::Padding pad : {nn::Padding::Same, nn::Padding::Valid}) {
            const std::string sfx = "/s" + std::to_string(stride) + (pad == nn::Padding::Same ? "same" : "valid");
            nn::Conv2D conv("conv", 3, 4, 3, stride, pad, true);
            conv.init(rng);
            for (double& v : conv.bias()->value.data()) v = 0.1;
            std::vector<nn::Param*> ps;
            conv.collect(ps);
            tag("conv2d" + sfx, check_layer(conv, ps, random_tensor({2, 3, 7, 6}, rng), rng));

            nn::DepthwiseConv2D dw("dw", 3, 3, stride, pad, true);
            dw.init(rng);
            std::vector<nn::Param*> pd;
            dw.collect(pd);
            tag("depthwise" + sfx, check_layer(dw, pd, random_tensor({2, 3, 7, 6}, rng), rng));
        }
    }
    {
        nn::Conv2D pw("pointwise", 4, 5, 1, 1, nn::Padding::Same, false);
        pw.init(rng);
        std::vector<nn::Param*> ps;
        pw.collect(ps);
        tag("conv2d/1x1", check_layer(pw, ps, random_tensor({1, 4, 5, 5}, rng), rng));
    }
    {
        nn::ChannelAffine aff("affine", 3);
        randomize_affine(aff, rng);
        std::vector<nn::Param*> ps;
        aff.collect(ps);
        tag("channel_affine", check_layer(aff, ps, random_tensor({2, 3, 4, 4}, rng), rng));
    }
    {
        nn::ReLU6 act;
        tag("relu6", check_layer(act, {}, kink_free(random_tensor({2, 2, 5, 5}, rng, -3.0, 9.0)), rng));
    }
    for (const nn::BlockSpec spec : {nn::BlockSpec{4, 4, 3, 1}, nn::BlockSpec{4, 6, 2, 2}, nn::BlockSpec{3, 3, 1, 1}}) {
        nn::InvertedResidual blk("block", spec);
        randomize_block(blk, rng);
        std::vector<nn::Param*> ps;
        blk.collect(ps);
        const std::string name = "inverted_residual/t" + std::to_string(spec.expansion) + "s" +
                                 std::to_string(spec.stride) + (blk.has_skip() ? "skip" : "");
        tag(name, check_layer(blk, ps, random_tensor({1, spec.in_channels, 6, 6}, rng, -1.5, 1.5), rng));
    }
    return all;
}

} // namespace satdet::testutil
