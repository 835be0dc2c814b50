#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "satdet/det/detect.hpp"
#include "satdet/error.hpp"
#include "satdet/quant/quant.hpp"
#include "satdet/scenegen.hpp"

using namespace satdet;
using namespace satdet::quant;
namespace fs = std::filesystem;

namespace {

det::ModelConfig tiny_config() {
    det::ModelConfig c;
    c.input_h = c.input_w = 32;
    c.input_gain = 4.0;
    c.stem_channels = 4;
    c.blocks = {{4, 4, 2, 2}, {4, 6, 2, 2}, {6, 6, 2, 1}};
    c.head_taps = {1, 2};
    c.anchors.feature_map_strides = {8, 8};
    c.anchors.anchor_scales_px = {{6.0}, {12.0}};
    c.anchors.aspect_ratios = {1.0, 2.0};
    return c;
}

std::vector<Image16> noise_frames(int n, std::uint64_t seed) {
    SceneConfig sc;
    sc.width_px = sc.height_px = 64;
    sc.star_count = 4;
    sc.rso_count = 1;
    std::vector<Image16> out;
    for (const auto& f : generate_observation_set(sc, n, 1, seed)) out.push_back(f.pixels);
    return out;
}

det::DetectorModel random_model(std::uint64_t seed) {
    det::DetectorModel m(tiny_config(), TrackingMode::RateTrack);
    m.init(seed);
    std::mt19937_64 rng(seed);
    for (nn::Param* p : m.params())
        if (p->name.find("shift") != std::string::npos)
            for (double& v : p->value.data()) v = std::uniform_real_distribution<double>(-0.2, 0.2)(rng);
    return m;
}

} // namespace

TEST(QuantParams, ReluRangeScale) {
    const QuantParams p = activation_params(0.0, 6.0);
    EXPECT_NEAR(p.scale, 6.0 / 255.0, 1e-15);
    EXPECT_NEAR(p.scale, 0.023529, 1e-6);
    EXPECT_EQ(p.zero_point, -128);
}

TEST(QuantParams, AsymmetricRange) {
    const QuantParams p = activation_params(-1.0, 1.55);
    EXPECT_NEAR(p.scale, 0.01, 1e-15);
    EXPECT_EQ(p.zero_point, -28);
}

TEST(QuantParams, RangeWidenedToZeroAndDegenerate) {
    const QuantParams p = activation_params(2.0, 5.0);
    EXPECT_NEAR(p.scale, 5.0 / 255.0, 1e-15);
    EXPECT_EQ(p.zero_point, -128);
    const QuantParams n = activation_params(-3.0, -1.0);
    EXPECT_EQ(n.zero_point, 127);
    const QuantParams d = activation_params(0.0, 0.0);
    EXPECT_EQ(d.scale, kDegenerateScale);
    EXPECT_THROW(activation_params(1.0, 0.0), ConfigError);
}

TEST(QuantParams, ZeroMapsToZeroPointExactly) {
    for (auto [lo, hi] : {std::pair{-1.0, 1.55}, {0.0, 6.0}, {-0.3, 17.0}, {-5.0, 0.01}}) {
        const QuantParams p = activation_params(lo, hi);
        EXPECT_EQ(quantize_value(0.0, p), p.zero_point);
        EXPECT_EQ(dequantize_value(static_cast<std::int8_t>(p.zero_point), p), 0.0);
    }
}

TEST(QuantParams, RoundTripWithinHalfStepProperty) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> ends(-10.0, 10.0);
    for (int t = 0; t < 500; ++t) {
        double a = ends(rng), b = ends(rng);
        if (a > b) std::swap(a, b);
        const QuantParams p = activation_params(a, b);
        const double lo = (kQMin - p.zero_point) * p.scale, hi = (kQMax - p.zero_point) * p.scale;
        std::uniform_real_distribution<double> in(std::max(std::min(a, 0.0), lo), std::min(std::max(b, 0.0), hi));
        for (int i = 0; i < 20; ++i) {
            const double v = in(rng);
            EXPECT_LE(std::abs(dequantize_value(quantize_value(v, p), p) - v), p.scale / 2 + 1e-12);
        }
    }
}

TEST(QuantParams, Saturates) {
    const QuantParams p{0.1, 0};
    EXPECT_EQ(quantize_value(1e6, p), 127);
    EXPECT_EQ(quantize_value(-1e6, p), -128);
}

TEST(WeightParams, SymmetricAndZeroTensor) {
    const std::vector<float> w{0.5f, -2.54f, 1.0f};
    const QuantParams p = weight_params(w);
    EXPECT_EQ(p.zero_point, 0);
    EXPECT_NEAR(p.scale, 2.54 / 127.0, 1e-8);
    const auto q = quantize_tensor(std::span<const float>(w), p);
    EXPECT_EQ(q[1], -127);
    const auto back = dequantize_tensor(q, p);
    for (std::size_t i = 0; i < w.size(); ++i) EXPECT_LE(std::abs(back[i] - w[i]), p.scale / 2 + 1e-7);

    const std::vector<float> zeros(9, 0.0f);
    const QuantParams z = weight_params(zeros);
    EXPECT_GT(z.scale, 0.0);
    for (auto v : quantize_tensor(std::span<const float>(zeros), z)) EXPECT_EQ(v, 0);
}

TEST(Requant, KnownMultipliers) {
    const Requant half = make_requant(0.5);
    EXPECT_EQ(half.multiplier, 1 << 30);
    EXPECT_EQ(half.shift, 31);
    EXPECT_EQ(apply_requant(100, half), 50);
    EXPECT_EQ(apply_requant(101, half), 51);  // 50.5 rounds up
    EXPECT_EQ(apply_requant(-100, half), -50);
    EXPECT_THROW(make_requant(0.0), ConfigError);
    EXPECT_THROW(make_requant(-1.0), ConfigError);
}

TEST(Requant, MatchesRealProductProperty) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> lm(-20.0, 3.0);
    std::uniform_int_distribution<std::int64_t> acc(-(1LL << 24), 1LL << 24);
    for (int t = 0; t < 5000; ++t) {
        const double m = std::exp2(lm(rng));
        const std::int64_t a = acc(rng);
        const Requant r = make_requant(m);
        EXPECT_NEAR(static_cast<double>(apply_requant(a, r)), static_cast<double>(a) * m, 1.0 + 1e-6 * std::abs(a * m))
            << "m=" << m << " acc=" << a;
    }
}

TEST(Calibration, ZeroFrameAndReluBounds) {
    const det::DetectorModel m = random_model(3);
    const det::InferenceGraph g = det::fold_model(m);
    const Calibration zero = calibrate(g, std::vector<Image16>{Image16(40, 40)});
    EXPECT_EQ(zero.input.min, 0.0);
    EXPECT_EQ(zero.input.max, 0.0);
    const Calibration c = calibrate(g, noise_frames(3, 4));
    EXPECT_EQ(c.frames, 3u);
    ASSERT_EQ(c.ops.size(), g.ops.size());
    for (std::size_t i = 0; i < g.ops.size(); ++i) {
        EXPECT_TRUE(c.ops[i].seen);
        if (g.ops[i].relu6) {
            EXPECT_GE(c.ops[i].min, 0.0) << g.ops[i].name;
            EXPECT_LE(c.ops[i].max, 6.0) << g.ops[i].name;
        }
    }
    EXPECT_THROW(calibrate(g, std::vector<Image16>{}), DataError);
}

TEST(Convert, StructureWeightsAndBiasScale) {
    const det::DetectorModel m = random_model(5);
    const det::InferenceGraph g = det::fold_model(m);
    ConversionReport report;
    const QuantizedModel q = convert_model(g, calibrate(g, noise_frames(4, 6)), &report);
    ASSERT_EQ(q.ops.size(), g.ops.size());
    EXPECT_EQ(q.outputs, g.outputs);
    for (std::size_t i = 0; i < g.ops.size(); ++i) {
        EXPECT_EQ(q.ops[i].name, g.ops[i].name);
        EXPECT_EQ(q.ops[i].out_channels, g.ops[i].out_channels);
        if (g.ops[i].kind == det::OpKind::Add) continue;
        EXPECT_EQ(q.ops[i].weight_shape, g.ops[i].weights.shape());
        const auto back = dequantize_tensor(q.ops[i].weights, q.ops[i].weight_params);
        for (std::size_t k = 0; k < back.size(); ++k)
            EXPECT_LE(std::abs(back[k] - g.ops[i].weights[k]), q.ops[i].weight_params.scale / 2 + 1e-7);
    }
    EXPECT_FALSE(report.tensors.empty());
    EXPECT_FALSE(conversion_report_table(report).empty());
    Calibration missing;
    missing.ops.resize(g.ops.size());
    EXPECT_THROW(convert_model(g, missing), DataError);
}

TEST(QuantizedDetector, TracksFloatOutputs) {
    const det::DetectorModel m = random_model(7);
    const det::InferenceGraph g = det::fold_model(m);
    const auto frames = noise_frames(6, 8);
    const QuantizedDetector qd(convert_model(g, calibrate(g, frames)));
    const det::FloatDetector fd(m);
    for (const auto& f : frames) {
        const auto a = fd.predict(f);
        const auto b = qd.predict(f);
        ASSERT_EQ(a.size(), b.size());
        double range = 0.0, err = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            range = std::max(range, static_cast<double>(std::abs(a[i])));
            err = std::max(err, static_cast<double>(std::abs(a[i] - b[i])));
        }
        EXPECT_LT(err, 0.1 * range);
    }
}

TEST(QuantizedDetector, BlankFrameGivesNoDetections) {
    const det::DetectorModel m = random_model(9);
    const det::InferenceGraph g = det::fold_model(m);
    const QuantizedDetector qd(convert_model(g, calibrate(g, noise_frames(2, 10))));
    EXPECT_TRUE(qd.detect(Image16(64, 64, 500), {0.25, 0.45}).empty());
}

TEST(QuantizedModelFile, RoundTripSmallerAndPrecisionTagged) {
    const fs::path dir = fs::temp_directory_path() / "satdet_test_quant";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const det::DetectorModel m = random_model(11);
    det::save_model(m, dir / "f.satdet");
    const det::InferenceGraph g = det::fold_model(m);
    const QuantizedModel q = convert_model(g, calibrate(g, noise_frames(2, 12)));
    save_quantized(q, dir / "q.satdet");
    EXPECT_EQ(det::checkpoint_precision(dir / "q.satdet"), det::Precision::Quantized);
    EXPECT_EQ(load_quantized(dir / "q.satdet"), q);
    EXPECT_LT(fs::file_size(dir / "q.satdet"), fs::file_size(dir / "f.satdet"));
    EXPECT_THROW(det::load_model(dir / "q.satdet"), DataError);
    EXPECT_THROW(load_quantized(dir / "f.satdet"), DataError);
    EXPECT_THROW(load_quantized(dir / "none.satdet"), DataError);
}
