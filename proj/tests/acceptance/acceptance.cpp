// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "../common/gradcheck.hpp"
#include "../common/oracles.hpp"
#include "satdet/dataset.hpp"
#include "satdet/det/detect.hpp"
#include "satdet/det/sidecar.hpp"
#include "satdet/det/train.hpp"
#include "satdet/eval/baseline.hpp"
#include "satdet/eval/latency.hpp"
#include "satdet/eval/metrics.hpp"
#include "satdet/eval/report.hpp"
#include "satdet/quant/quant.hpp"
#include "satdet/scenegen.hpp"

using namespace satdet;
namespace fs = std::filesystem;

namespace {

struct Settings {
    fs::path work = fs::temp_directory_path() / "satdet_acceptance";
    std::uint64_t data_seed = 2024;
    std::uint64_t split_seed = 11;
    int epochs = det::TrainConfig{}.epochs;
    int latency_frames = 100;
};

int failures = 0;

void verdict(int id, bool pass, const std::string& what, const std::string& detail) {
    std::printf("[%s] criterion %d: %s (%s)\n", pass ? "PASS" : "FAIL", id, what.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!pass) ++failures;
}

std::string strf(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

constexpr det::DetectOptions kDetect{0.25, 0.45};
constexpr double kMatchIou = 0.3;

template <typename Detector>
eval::EvalReport evaluate(const Detector& d, const std::vector<LabeledFrame>& frames, const std::string& name) {
    eval::Evaluator ev(kMatchIou, kDetect.confidence_threshold);
    for (const auto& f : frames) ev.add_frame(d.detect(f.pixels, kDetect), f.boxes);
    return ev.report(name);
}

std::string prf(const eval::EvalReport& r) { return strf("P %.4f R %.4f F1 %.4f", r.precision, r.recall, r.f1); }

struct Dataset {
    std::vector<LabeledFrame> train, val;
};

/// generate -> write -> split -> augment -> load, through the on-disk path.
Dataset build_dataset(const Settings& s, const fs::path& dir) {
    fs::remove_all(dir);
    SceneConfig base;
    const auto frames = generate_observation_set(base, 15, 1, s.data_seed, RsoCountRange{1, 3});
    const DatasetManifest raw = write_frames(frames, dir / "raw");
    auto [train, val] = split_dataset(raw.records, 10.0 / 15.0, s.split_seed);
    const DatasetManifest tr8 = augment_x8(train, dir / "raw", dir / "train");
    const DatasetManifest va8 = augment_x8(val, dir / "raw", dir / "val");
    return {load_frames(tr8, dir / "train"), load_frames(va8, dir / "val")};
}

double peak_snr(const SourcePlacement& rso, const SceneConfig& c) {
    // Peak of the pixel-integrated Gaussian over the per-pixel noise at the background.
    const double peak = rso.flux / (2.0 * M_PI * c.psf_sigma_px * c.psf_sigma_px);
    const double noise = std::sqrt(c.read_noise_sigma * c.read_noise_sigma + (c.shot_noise ? c.background_level : 0.0));
    return peak / noise;
}

} // namespace

int main(int argc, char** argv) {
    Settings s;
    CLI::App app{"satdet acceptance run"};
    app.add_option("--work", s.work, "scratch directory");
    app.add_option("--epochs", s.epochs, "training epochs for the Small detector");
    app.add_option("--latency-frames", s.latency_frames)->check(CLI::Range(100, 100000));
    CLI11_PARSE(app, argc, argv);
    spdlog::set_level(spdlog::level::warn);
    fs::create_directories(s.work);
    const auto t_start = std::chrono::steady_clock::now();

    // 5: metric engine against the tabulated (P, R) pairs.
    {
        struct Row {
            double p, r, f1;
        };
        const Row rows[] = {{0.9574, 0.9783, 0.9677}, {0.9783, 1.0, 0.9890}, {0.9767, 0.913, 0.9438}, {0.9778, 0.9565, 0.9670}};
        bool ok = true;
        std::string detail;
        for (const Row& r : rows) {
            const double got = std::round(eval::f1_score(r.p, r.r) * 1e4) / 1e4;
            ok = ok && got == r.f1;
            detail += strf("%.4f ", got);
        }
        detail.pop_back();
        verdict(5, ok, "F1 reproduces the four tabulated values to 4 d.p.", detail);
    }

    // 6: numerical core.
    {
        double worst_grad = 0.0;
        std::string worst_name;
        for (const auto& r : testutil::check_all_layer_kinds(17)) {
            if (r.rel_error > worst_grad) {
                worst_grad = r.rel_error;
                worst_name = r.what;
            }
        }

        std::mt19937_64 rng(5);
        std::uniform_real_distribution<double> c(0.0, 512.0), sz(2.0, 120.0);
        double worst_coding = 0.0;
        for (int i = 0; i < 100000; ++i) {
            const det::Anchor a{c(rng), c(rng), sz(rng), sz(rng)};
            const BoundingBox b = testutil::random_box(rng, 512.0);
            const BoundingBox r = det::decode_box(det::encode_box(b, a), a);
            worst_coding = std::max({worst_coding, std::abs(r.x_min - b.x_min), std::abs(r.y_min - b.y_min),
                                     std::abs(r.x_max - b.x_max), std::abs(r.y_max - b.y_max)});
        }

        std::uniform_int_distribution<int> count(0, 60), coarse(0, 4);
        std::uniform_real_distribution<double> conf(0.0, 1.0), thr(0.05, 0.95);
        int nms_agree = 0;
        for (int trial = 0; trial < 1000; ++trial) {
            std::vector<Detection> dets;
            const int n = count(rng);
            for (int i = 0; i < n; ++i) dets.push_back({testutil::random_box(rng, 100.0), trial % 2 ? conf(rng) : coarse(rng) / 4.0});
            const double t = thr(rng);
            nms_agree += det::nms(dets, t) == testutil::nms_oracle(dets, t);
        }
        verdict(6, worst_grad <= 1e-4 && worst_coding < 1e-9 && nms_agree == 1000, "numerical core",
                strf("worst grad rel-err %.2e at %s; round-trip max err %.2e; NMS %d/1000 match oracle", worst_grad,
                    worst_name.c_str(), worst_coding, nms_agree));
    }

    // 7: rendering physics.
    {
        std::mt19937_64 rng(3);
        std::uniform_real_distribution<double> pos(40.0, 88.0), flux(1e3, 1e6);
        double worst_flux = 0.0;
        for (int i = 0; i < 200; ++i) {
            ImageD canvas(128, 128);
            const double f = flux(rng);
            if (i % 2) {
                render_point_source(canvas, {pos(rng), pos(rng)}, f, 1.5);
            } else {
                render_streak(canvas, {pos(rng), pos(rng)}, {pos(rng), pos(rng)}, f, 1.5);
            }
            double sum = 0.0;
            for (double v : canvas.pixels()) sum += v;
            worst_flux = std::max(worst_flux, std::abs(sum - f) / f);
        }
        double worst_degenerate = 0.0;
        for (int i = 0; i < 50; ++i) {
            ImageD a(64, 64), b(64, 64);
            const Point2 p{pos(rng) / 2.0, pos(rng) / 2.0};
            const double f = flux(rng);
            render_streak(a, p, p, f, 1.5);
            render_point_source(b, p, f, 1.5);
            const double peak = *std::max_element(b.pixels().begin(), b.pixels().end());
            for (std::size_t k = 0; k < a.size(); ++k)
                worst_degenerate = std::max(worst_degenerate, std::abs(a.pixels()[k] - b.pixels()[k]) / peak);
        }
        verdict(7, worst_flux <= 0.01 && worst_degenerate <= 1e-6, "rendering physics",
                strf("worst interior flux error %.2e; degenerate streak vs point %.2e of peak", worst_flux,
                    worst_degenerate));
    }

    // 8: determinism of data generation and training.
    {
        const Dataset a = build_dataset(s, s.work / "det_a");
        const Dataset b = build_dataset(s, s.work / "det_b");
        bool same_files = true;
        for (const auto& entry : fs::recursive_directory_iterator(s.work / "det_a")) {
            if (!entry.is_regular_file()) continue;
            const fs::path twin = s.work / "det_b" / fs::relative(entry.path(), s.work / "det_a");
            same_files = same_files && fs::exists(twin) && slurp(entry.path()) == slurp(twin);
        }
        const bool same_frames = a.train == b.train && a.val == b.val;

        det::TrainConfig tc;
        tc.epochs = 2;
        const std::vector<LabeledFrame> tr(a.train.begin(), a.train.begin() + 16), va(a.val.begin(), a.val.begin() + 8);
        const auto r1 = det::train(tr, va, det::small_model_config(), tc);
        const auto r2 = det::train(tr, va, det::small_model_config(), tc);
        bool same_loss = r1.log.size() == r2.log.size();
        std::string losses;
        for (std::size_t i = 0; same_loss && i < r1.log.size(); ++i) {
            same_loss = r1.log[i].train_loss == r2.log[i].train_loss;
            losses += strf("%.17g ", r1.log[i].train_loss);
        }
        verdict(8, same_files && same_frames && same_loss, "determinism",
                strf("dataset files %s, frames %s, epoch losses %s [%s]", same_files ? "identical" : "differ",
                    same_frames ? "identical" : "differ", same_loss ? "identical" : "differ", losses.c_str()));
    }

    // 9: classical baseline on bright RSOs.
    {
        SceneConfig bright;
        bright.rso_mag_range = {10.5, 12.0};
        eval::Evaluator ev(kMatchIou, kDetect.confidence_threshold);
        double min_snr = 1e300;
        for (int obs = 0; obs < 40; ++obs) {
            SceneConfig c = bright;
            c.seed = derive_seed(909, static_cast<std::uint64_t>(obs), 0);
            c.rso_count = 1 + obs % 3;
            Rng rng(c.seed);
            const SceneLayout layout = sample_layout(c, rng);
            for (const auto& r : layout.rsos) min_snr = std::min(min_snr, peak_snr(r, c));
            const LabeledFrame f = render_frame(c, layout, 0, rng);
            ev.add_frame(eval::baseline_detect(f.pixels, eval::SourceShape::Point), f.boxes);
        }
        const eval::EvalReport r = ev.report("baseline");
        verdict(9, r.f1 >= 0.9 && min_snr >= 20.0, "baseline F1 >= 0.9 on bright RSOs",
                strf("%s over %zu frames, min RSO peak SNR %.1f", prf(r).c_str(), r.n_frames, min_snr));
    }

    // 1: train the Small detector.
    const Dataset data = build_dataset(s, s.work / "main");
    det::TrainConfig tc;
    tc.epochs = s.epochs;
    const auto t_train = std::chrono::steady_clock::now();
    const det::TrainResult trained = det::train(data.train, data.val, det::small_model_config(), tc,
                                                [](const det::EpochLog& e) {
                                                    spdlog::info("epoch {} loss {:.4f} F1 {:.4f}", e.epoch,
                                                                 e.train_loss, e.val_f1);
                                                });
    const double train_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_train).count();
    const det::FloatDetector float_small(trained.model);
    const eval::EvalReport float_report = evaluate(float_small, data.val, "float-small");
    verdict(1, data.train.size() == 80 && data.val.size() == 40 && float_report.f1 >= 0.95,
            "Small detector validation F1 >= 0.95",
            strf("%zu train / %zu val frames, %zu targets; %s; best epoch %d of %d; %.0f s training",
                data.train.size(), data.val.size(), float_report.n_targets, prf(float_report).c_str(),
                trained.best_epoch, tc.epochs, train_s));

    // 2: int8 conversion.
    const std::vector<Image16> calib = [&] {
        std::vector<Image16> out;
        for (std::size_t i = 0; i < 16; ++i) out.push_back(data.train[i * data.train.size() / 16].pixels);
        return out;
    }();
    const det::InferenceGraph graph = det::fold_model(trained.model);
    const quant::QuantizedModel qmodel = quant::convert_model(graph, quant::calibrate(graph, calib));
    const quant::QuantizedDetector quant_small(qmodel);
    {
        const eval::EvalReport q = evaluate(quant_small, data.val, "quantized-small");
        // Logit agreement relative to the decision threshold, and file sizes.
        const double thr_logit = std::log(kDetect.confidence_threshold / (1.0 - kDetect.confidence_threshold));
        std::size_t agree = 0, total = 0;
        for (const auto& f : data.val) {
            const auto a = float_small.predict(f.pixels), b = quant_small.predict(f.pixels);
            for (std::size_t i = 4; i < a.size(); i += 5, ++total) agree += (a[i] > thr_logit) == (b[i] > thr_logit);
        }
        det::save_model(trained.model, s.work / "float.satdet");
        quant::save_quantized(qmodel, s.work / "int8.satdet");
        const auto fsz = fs::file_size(s.work / "float.satdet"), qsz = fs::file_size(s.work / "int8.satdet");
        verdict(2, std::abs(q.f1 - float_report.f1) <= 0.02, "quantized F1 within 0.02 of float",
                strf("%s vs float F1 %.4f; threshold-side agreement %.2f%% of anchors; file %ju vs %ju bytes",
                    prf(q).c_str(), float_report.f1, 100.0 * static_cast<double>(agree) / static_cast<double>(total),
                    static_cast<std::uintmax_t>(qsz), static_cast<std::uintmax_t>(fsz)));
    }

    // 3: latency ordering.
    {
        SceneConfig c;
        const auto frames = generate_observation_set(c, s.latency_frames, 1, 77, RsoCountRange{1, 3});
        std::vector<Image16> images;
        for (const auto& f : frames) images.push_back(f.pixels);
        det::DetectorModel large(det::large_model_config(), TrackingMode::RateTrack);
        large.init(7);
        const det::FloatDetector float_large(large);
        const auto q = eval::benchmark_latency([&](const Image16& im) { (void)quant_small.detect(im, kDetect); }, images,
                                               5, "quantized-small");
        const auto fs_ = eval::benchmark_latency([&](const Image16& im) { (void)float_small.detect(im, kDetect); },
                                                 images, 5, "float-small");
        const auto fl = eval::benchmark_latency([&](const Image16& im) { (void)float_large.detect(im, kDetect); },
                                                images, 5, "float-large");
        verdict(3, q.mean_s < fs_.mean_s && fs_.mean_s < fl.mean_s, "latency quantized-Small < float-Small < float-Large",
                strf("%zu frames; means %.2f ms < %.2f ms < %.2f ms", q.n_images, q.mean_s * 1e3, fs_.mean_s * 1e3,
                    fl.mean_s * 1e3));
    }

    // 4: RateTrack model on Sidereal frames.
    {
        SceneConfig c;
        c.tracking_mode = TrackingMode::Sidereal;
        const auto frames = generate_observation_set(c, 40, 1, 4242, RsoCountRange{1, 3});
        const eval::EvalReport r = evaluate(float_small, frames, "float-small@sidereal");
        verdict(4, r.f1 <= 0.5, "RateTrack model on Sidereal frames scores F1 <= 0.5",
                strf("%s over %zu frames", prf(r).c_str(), r.n_frames));
    }

    const double total_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    std::printf("%d of 9 criteria failed; %.0f s total\n", failures, total_s);
    return failures == 0 ? 0 : 1;
}
