#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "../common/gradcheck.hpp"
#include "../common/oracles.hpp"
#include "satdet/det/detect.hpp"
#include "satdet/det/loss.hpp"
#include "satdet/det/sidecar.hpp"
#include "satdet/det/train.hpp"
#include "satdet/error.hpp"
#include "satdet/scenegen.hpp"

using namespace satdet;
using namespace satdet::det;
namespace fs = std::filesystem;
using testutil::nms_oracle;
using testutil::random_box;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
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

} // namespace

TEST(Anchors, SmallModelCount) {
    const ModelConfig c = small_model_config();
    const auto anchors = build_anchors(c.anchors, c.input_h, c.input_w);
    // 32x32 cells x 6 + 16x16 cells x 6
    EXPECT_EQ(anchors.size(), 7680u);
    EXPECT_EQ(DetectorModel(c, TrackingMode::RateTrack).anchors().size(), 7680u);
}

TEST(Anchors, LargeModelCount) {
    const ModelConfig c = large_model_config();
    EXPECT_EQ(build_anchors(c.anchors, c.input_h, c.input_w).size(), (64u * 64 + 32 * 32 + 16 * 16) * 6);
}

TEST(Anchors, OrderAndGeometry) {
    AnchorConfig ac{{8}, {{6.0, 12.0}}, {1.0, 4.0}};
    const auto a = build_anchors(ac, 16, 24);
    ASSERT_EQ(a.size(), 2u * 3 * 4);
    EXPECT_DOUBLE_EQ(a[0].cx, 4.0);
    EXPECT_DOUBLE_EQ(a[0].cy, 4.0);
    EXPECT_DOUBLE_EQ(a[0].w, 6.0);
    EXPECT_DOUBLE_EQ(a[1].w, 12.0);  // w = s * sqrt(4)
    EXPECT_DOUBLE_EQ(a[1].h, 3.0);
    EXPECT_DOUBLE_EQ(a[2].w, 12.0);
    EXPECT_DOUBLE_EQ(a[4].cx, 12.0);  // next cell along the row
    EXPECT_DOUBLE_EQ(a[12].cy, 12.0); // second row
    EXPECT_EQ(feature_map_extent(17, 8), 3);
    EXPECT_THROW(build_anchors({{8}, {{64.0}}, {1.0}}, 32, 32), ConfigError);
}

TEST(BoxCoding, RoundTripProperty) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> c(0.0, 256.0), s(2.0, 80.0);
    double worst = 0.0;
    for (int i = 0; i < 10000; ++i) {
        const Anchor a{c(rng), c(rng), s(rng), s(rng)};
        const BoundingBox b = random_box(rng, 256.0);
        const BoundingBox r = decode_box(encode_box(b, a), a);
        worst = std::max({worst, std::abs(r.x_min - b.x_min), std::abs(r.y_min - b.y_min), std::abs(r.x_max - b.x_max),
                          std::abs(r.y_max - b.y_max)});
    }
    EXPECT_LT(worst, 1e-9);
}

TEST(BoxCoding, KnownValues) {
    const Anchor a{10.0, 20.0, 8.0, 4.0};
    const BoxOffsets o = encode_box({8.0, 18.0, 16.0, 26.0}, a);
    // centre (12, 22): dx = 2/8/0.1, dy = 2/4/0.1; size (8, 8): log(1)/0.2, log(2)/0.2
    EXPECT_NEAR(o[0], 2.5, 1e-12);
    EXPECT_NEAR(o[1], 5.0, 1e-12);
    EXPECT_NEAR(o[2], 0.0, 1e-12);
    EXPECT_NEAR(o[3], std::log(2.0) / 0.2, 1e-12);
    EXPECT_THROW(encode_box({1.0, 1.0, 1.0, 2.0}, a), DataError);
}

TEST(Matching, ThresholdsForcedMatchAndTies) {
    std::vector<Anchor> anchors{{5, 5, 10, 10}, {6, 5, 10, 10}, {50, 50, 10, 10}, {52, 50, 10, 10}, {90, 90, 4, 4}};
    std::vector<BoundingBox> gts{{0, 0, 10, 10}, {80, 80, 100, 100}};
    const auto labels = match_anchors(gts, anchors, 0.5, 0.4);
    EXPECT_EQ(labels[0].kind, AnchorLabel::Kind::Positive);
    EXPECT_EQ(labels[0].gt_index, 0);
    EXPECT_EQ(labels[1].kind, AnchorLabel::Kind::Positive);  // IoU 9/11
    EXPECT_EQ(labels[2].kind, AnchorLabel::Kind::Negative);
    EXPECT_EQ(labels[3].kind, AnchorLabel::Kind::Negative);
    // IoU 16/400 is below both thresholds but it is gt 1's best anchor.
    EXPECT_EQ(labels[4].kind, AnchorLabel::Kind::Positive);
    EXPECT_EQ(labels[4].gt_index, 1);

    // Two identical ground truths compete for one anchor: lowest index wins.
    std::vector<BoundingBox> twins{{0, 0, 10, 10}, {0, 0, 10, 10}};
    EXPECT_EQ(match_anchors(twins, std::span(anchors).first(1), 0.5, 0.4)[0].gt_index, 0);
    EXPECT_THROW(match_anchors(gts, anchors, 0.4, 0.5), ConfigError);
}

TEST(Matching, IgnoreBand) {
    std::vector<Anchor> anchors{{5, 5, 10, 10}, {7, 5, 10, 10}};
    std::vector<BoundingBox> gts{{0, 0, 10, 10}};
    // Second anchor IoU = 8/12 = 0.667 -> positive at 0.5, ignored at (0.7, 0.6).
    const auto labels = match_anchors(gts, anchors, 0.7, 0.6);
    EXPECT_EQ(labels[1].kind, AnchorLabel::Kind::Ignore);
}

TEST(Nms, MatchesBruteForceOnRandomCases) {
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<int> count(0, 40);
    std::uniform_real_distribution<double> conf(0.0, 1.0), thr(0.1, 0.9);
    std::uniform_int_distribution<int> coarse(0, 4);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<Detection> dets;
        const int n = count(rng);
        for (int i = 0; i < n; ++i) {
            // Coarse confidences make ties common.
            const double c = trial % 2 ? conf(rng) : coarse(rng) / 4.0;
            dets.push_back({random_box(rng, 80.0), c});
        }
        const double t = thr(rng);
        ASSERT_EQ(nms(dets, t), nms_oracle(dets, t)) << "trial " << trial;
    }
}

TEST(Nms, SuppressesOverlapsKeepsDisjoint) {
    std::vector<Detection> d{{{0, 0, 10, 10}, 0.9}, {{1, 0, 11, 10}, 0.8}, {{50, 50, 60, 60}, 0.3}};
    const auto kept = nms(d, 0.45);
    ASSERT_EQ(kept.size(), 2u);
    EXPECT_EQ(kept[0].confidence, 0.9);
    EXPECT_EQ(kept[1].confidence, 0.3);
}

TEST(Detect, SigmoidClampsLogits) {
    EXPECT_DOUBLE_EQ(sigmoid(0.0), 0.5);
    EXPECT_LT(sigmoid(1e6), 1.0);
    EXPECT_GT(sigmoid(-1e6), 0.0);
    EXPECT_DOUBLE_EQ(sigmoid(1e6), sigmoid(kLogitClamp));
}

TEST(Detect, PreprocessResizesScalesAndRemovesSky) {
    Image16 img(8, 4, 65535);
    const nn::TensorF t = preprocess(img, 2, 4);
    EXPECT_EQ(t.shape(), (nn::Shape{1, 1, 2, 4}));
    for (float v : t.data()) EXPECT_FLOAT_EQ(v, 0.0f);
    Image16 g(6, 1);
    for (int x = 0; x < 6; ++x) g.at(x, 0) = static_cast<std::uint16_t>(x * 1000);
    // Halving samples at x = 0.5, 2.5, 4.5 -> 500, 2500, 4500; the median 2500 is removed.
    const nn::TensorF h = preprocess(g, 1, 3);
    EXPECT_NEAR(h[0] * 65535.0, -2000.0, 1e-2);
    EXPECT_NEAR(h[1] * 65535.0, 0.0, 1e-2);
    EXPECT_NEAR(h[2] * 65535.0, 2000.0, 1e-2);
}

TEST(Detect, DecodeMapsAnchorToImageAndThresholds) {
    const ModelConfig c = tiny_config();
    const auto anchors = build_anchors(c.anchors, c.input_h, c.input_w);
    std::vector<float> rows(anchors.size() * 5, 0.0f);
    for (std::size_t a = 0; a < anchors.size(); ++a) rows[a * 5 + 4] = -10.0f;
    rows[5 * 5 + 4] = 3.0f;  // anchor 5 fires with zero offsets
    const auto dets = decode_detections(rows, anchors, c, 64, 128, {0.25, 0.45});
    ASSERT_EQ(dets.size(), 1u);
    const BoundingBox expect = anchors[5].box();
    EXPECT_NEAR(dets[0].box.x_min, std::max(0.0, expect.x_min * 2.0), 1e-5);
    EXPECT_NEAR(dets[0].box.y_max, std::min(128.0, expect.y_max * 4.0), 1e-5);
    EXPECT_NEAR(dets[0].confidence, sigmoid(3.0), 1e-7);
    EXPECT_TRUE(decode_detections(rows, anchors, c, 64, 128, {0.99, 0.45}).empty());
}

TEST(Loss, ScalarCases) {
    EXPECT_DOUBLE_EQ(smooth_l1(0.5), 0.125);
    EXPECT_DOUBLE_EQ(smooth_l1(-2.0), 1.5);
    EXPECT_DOUBLE_EQ(smooth_l1_grad(0.5), 0.5);
    EXPECT_DOUBLE_EQ(smooth_l1_grad(-2.0), -1.0);
    EXPECT_NEAR(bce_with_logits(0.0, 1.0), std::log(2.0), 1e-15);
    EXPECT_NEAR(bce_with_logits(2.0, 0.0), std::log1p(std::exp(2.0)), 1e-12);
    EXPECT_NEAR(bce_with_logits(-800.0, 0.0), 0.0, 1e-15);
    EXPECT_TRUE(std::isfinite(bce_with_logits(-800.0, 1.0)));
}

TEST(Loss, HardNegativeCountAndNormalisation) {
    std::vector<Anchor> anchors;
    for (int i = 0; i < 10; ++i) anchors.push_back({10.0 + 20.0 * i, 10.0, 10.0, 10.0});
    const std::vector<BoundingBox> gt{{5, 5, 15, 15}};
    const AnchorTargets t = make_targets(gt, anchors, 0.5, 0.4);
    ASSERT_EQ(t.positives, 1u);
    std::vector<double> pred(50, 0.0);
    for (int a = 0; a < 10; ++a) pred[static_cast<std::size_t>(a * 5 + 4)] = 0.1 * a;
    std::vector<double> grad(50);
    const LossValue v = ssd_loss(pred, std::span(&t, 1), 3.0, grad);
    EXPECT_EQ(v.negatives, 3u);
    // Mined negatives are the three highest logits: anchors 7, 8, 9.
    for (int a = 1; a < 7; ++a) EXPECT_EQ(grad[static_cast<std::size_t>(a * 5 + 4)], 0.0);
    for (int a = 7; a < 10; ++a) EXPECT_GT(grad[static_cast<std::size_t>(a * 5 + 4)], 0.0);
    const double cls = bce_with_logits(0.0, 1.0) + bce_with_logits(0.7, 0) + bce_with_logits(0.8, 0) +
                       bce_with_logits(0.9, 0);
    EXPECT_NEAR(v.classification, cls, 1e-12);
    EXPECT_NEAR(v.localization, 0.0, 1e-12);  // offsets of an exact anchor are zero
}

TEST(Loss, GradientMatchesFiniteDifference) {
    std::mt19937_64 rng(3);
    std::vector<Anchor> anchors;
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) anchors.push_back({8.0 + 16 * i, 8.0 + 16 * j, 12.0, 12.0});
    const std::vector<BoundingBox> g0{{2, 3, 14, 13}, {40, 40, 52, 54}};
    const std::vector<BoundingBox> g1{{70, 20, 84, 30}};
    const std::vector<AnchorTargets> ts{make_targets(g0, anchors, 0.5, 0.4), make_targets(g1, anchors, 0.5, 0.4)};
    std::vector<double> pred(2 * anchors.size() * 5);
    std::uniform_real_distribution<double> d(-2.0, 2.0);
    for (double& v : pred) v = d(rng);
    std::vector<double> grad(pred.size()), numeric(pred.size());
    (void)ssd_loss(pred, ts, 3.0, grad);
    const double eps = 1e-6;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double keep = pred[i];
        pred[i] = keep + eps;
        const double up = ssd_loss(pred, ts, 3.0).total;
        pred[i] = keep - eps;
        const double down = ssd_loss(pred, ts, 3.0).total;
        pred[i] = keep;
        numeric[i] = (up - down) / (2 * eps);
    }
    EXPECT_LT(testutil::relative_error(grad, numeric), 1e-6);
}

TEST(Model, ConfigsValidateAndRejectBadTaps) {
    EXPECT_NO_THROW(small_model_config().validate());
    EXPECT_NO_THROW(large_model_config().validate());
    ModelConfig c = small_model_config();
    c.anchors.feature_map_strides = {16, 16};
    EXPECT_THROW(c.validate(), ConfigError);
    c = small_model_config();
    c.blocks[1].in_channels = 17;
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_EQ(parse_size_class("Large"), SizeClass::Large);
    EXPECT_THROW(parse_size_class("medium"), ConfigError);
}

TEST(Model, HeadShapesAndFlattenScatterInverse) {
    DetectorModel m(tiny_config(), TrackingMode::RateTrack);
    m.init(1);
    std::mt19937_64 rng(4);
    const nn::Tensor x = testutil::random_tensor({2, 1, 32, 32}, rng, 0.0, 1.0);
    const auto heads = m.forward(x, nullptr);
    ASSERT_EQ(heads.size(), 2u);
    EXPECT_EQ(heads[0].shape(), (nn::Shape{2, 10, 4, 4}));
    const auto flat = flatten_head_outputs(heads, m.config(), 1);
    EXPECT_EQ(flat.size(), m.anchors().size() * 5);
    std::vector<nn::Tensor> back{nn::Tensor(heads[0].shape()), nn::Tensor(heads[1].shape())};
    scatter_head_grads(flat, m.config(), 1, back);
    for (std::size_t h = 0; h < 2; ++h)
        for (std::size_t i = heads[h].size() / 2; i < heads[h].size(); ++i) EXPECT_EQ(back[h][i], heads[h][i]);
}

TEST(Model, WholeNetworkGradientCheck) {
    ModelConfig c = tiny_config();
    c.input_h = c.input_w = 16;
    c.anchors.anchor_scales_px = {{4.0}, {8.0}};
    DetectorModel m(c, TrackingMode::RateTrack);
    m.init(5);
    std::mt19937_64 rng(6);
    for (nn::Param* p : m.params())
        if (p->name.find("affine") != std::string::npos)
            for (double& v : p->value.data()) v += std::uniform_real_distribution<double>(-0.2, 0.2)(rng);
    const nn::Tensor x = testutil::random_tensor({1, 1, 16, 16}, rng, 0.0, 0.2);
    std::vector<nn::Tensor> probes;
    auto loss = [&]() {
        const auto heads = m.forward(x, nullptr);
        if (probes.empty())
            for (const auto& h : heads) probes.push_back(testutil::random_tensor(h.shape(), rng));
        double s = 0.0;
        for (std::size_t h = 0; h < heads.size(); ++h)
            for (std::size_t i = 0; i < heads[h].size(); ++i) s += heads[h][i] * probes[h][i];
        return s;
    };
    (void)loss();
    m.zero_grad();
    nn::Tape tape;
    (void)m.forward(x, &tape);
    m.backward(probes, tape);
    EXPECT_TRUE(tape.empty());
    std::vector<double> analytic, numeric;
    for (nn::Param* p : m.params()) {
        for (std::size_t i = 0; i < p->value.size(); i += 3) {
            analytic.push_back(p->grad[i]);
            const double keep = p->value[i];
            p->value[i] = keep + 1e-5;
            const double up = loss();
            p->value[i] = keep - 1e-5;
            const double down = loss();
            p->value[i] = keep;
            numeric.push_back((up - down) / 2e-5);
        }
    }
    EXPECT_LT(testutil::relative_error(analytic, numeric), 1e-4);
}

TEST(Model, FoldedFloatGraphMatchesTrainingForward) {
    DetectorModel m(tiny_config(), TrackingMode::Sidereal);
    m.init(7);
    std::mt19937_64 rng(8);
    for (nn::Param* p : m.params())
        if (p->name.find("affine") != std::string::npos)
            for (double& v : p->value.data()) v += std::uniform_real_distribution<double>(-0.3, 0.3)(rng);
    Image16 img(64, 48);
    for (auto& v : img.pixels()) v = static_cast<std::uint16_t>(std::uniform_int_distribution<int>(0, 4000)(rng));
    const FloatDetector fd(m);
    const std::vector<float> rows = fd.predict(img);
    const nn::TensorF pre = preprocess(img, 32, 32);
    const auto heads = m.forward(pre.cast<double>(), nullptr);
    const auto ref = flatten_head_outputs(heads, m.config(), 0);
    ASSERT_EQ(rows.size(), ref.size());
    double scale = 0.0;
    for (double v : ref) scale = std::max(scale, std::abs(v));
    for (std::size_t i = 0; i < rows.size(); ++i) EXPECT_NEAR(rows[i], ref[i], 1e-4 * std::max(1.0, scale));
}

TEST(Model, SaveLoadRoundTripAndErrors) {
    const fs::path dir = fs::temp_directory_path() / "satdet_test_model";
    fs::remove_all(dir);
    fs::create_directories(dir);
    DetectorModel m(tiny_config(), TrackingMode::Sidereal);
    m.init(9);
    save_model(m, dir / "m.satdet");
    EXPECT_TRUE(fs::exists(dir / "m.satdet.json"));
    EXPECT_EQ(checkpoint_precision(dir / "m.satdet"), Precision::Float);
    const DetectorModel back = load_model(dir / "m.satdet");
    EXPECT_EQ(back.config(), m.config());
    EXPECT_EQ(back.tracking_mode(), TrackingMode::Sidereal);
    const auto pa = m.params();
    const auto pb = back.params();
    ASSERT_EQ(pa.size(), pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->value, pb[i]->value) << pa[i]->name;
    EXPECT_THROW(load_model(dir / "missing.satdet"), DataError);
    fs::remove(dir / "m.satdet.json");
    EXPECT_THROW(load_model(dir / "m.satdet"), DataError);
}

TEST(Model, ConfigJsonRoundTrip) {
    for (const ModelConfig& c : {small_model_config(), large_model_config(), tiny_config()}) {
        EXPECT_EQ(model_config_from_json(model_config_to_json(c)), c);
    }
}

TEST(Train, DeterministicAndRejectsBadInput) {
    SceneConfig sc;
    sc.width_px = sc.height_px = 64;
    sc.star_count = 3;
    sc.rso_count = 1;
    const auto frames = generate_observation_set(sc, 4, 1, 3);
    const std::vector<LabeledFrame> tr(frames.begin(), frames.begin() + 3), va(frames.begin() + 3, frames.end());
    TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 2;
    const TrainResult a = train(tr, va, tiny_config(), tc);
    const TrainResult b = train(tr, va, tiny_config(), tc);
    ASSERT_EQ(a.log.size(), 2u);
    for (std::size_t i = 0; i < a.log.size(); ++i) EXPECT_EQ(a.log[i].train_loss, b.log[i].train_loss);
    EXPECT_LT(a.log[1].train_loss, a.log[0].train_loss);
    EXPECT_GE(a.best_epoch, 1);
    EXPECT_THROW(train({}, va, tiny_config(), tc), DataError);
    auto sidereal = va;
    sidereal[0].tracking_mode = TrackingMode::Sidereal;
    EXPECT_THROW(train(tr, sidereal, tiny_config(), tc), ConfigError);
    tc.epochs = 0;
    EXPECT_THROW(train(tr, va, tiny_config(), tc), ConfigError);
}
