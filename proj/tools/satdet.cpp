#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "satdet/dataset.hpp"
#include "satdet/det/detect.hpp"
#include "satdet/det/train.hpp"
#include "satdet/error.hpp"
#include "satdet/eval/annotate.hpp"
#include "satdet/eval/baseline.hpp"
#include "satdet/eval/report.hpp"
#include "satdet/imageio.hpp"
#include "satdet/quant/quant.hpp"
#include "satdet/scenegen.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace satdet;

namespace {

// ---- shared helpers -------------------------------------------------------

std::string read_text(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_json(const fs::path& path, const json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

json detections_json(const std::vector<Detection>& dets) {
    json arr = json::array();
    for (const auto& d : dets) {
        arr.push_back({{"box", {d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max}}, {"confidence", d.confidence}});
    }
    return arr;
}

/// Float or quantized checkpoint, chosen by the sidecar.
class AnyDetector {
public:
    explicit AnyDetector(const fs::path& checkpoint) {
        precision_ = det::checkpoint_precision(checkpoint);
        if (precision_ == det::Precision::Float) {
            const det::DetectorModel m = det::load_model(checkpoint);
            size_ = m.config().size_class;
            mode_ = m.tracking_mode();
            float_ = std::make_unique<det::FloatDetector>(m);
        } else {
            quant::QuantizedModel q = quant::load_quantized(checkpoint);
            size_ = q.config.size_class;
            mode_ = q.tracking_mode;
            quant_ = std::make_unique<quant::QuantizedDetector>(std::move(q));
        }
    }

    std::vector<Detection> detect(const Image16& img, const det::DetectOptions& opts) const {
        return float_ ? float_->detect(img, opts) : quant_->detect(img, opts);
    }

    std::string name() const { return std::string(det::to_string(precision_)) + "-" + std::string(det::to_string(size_)); }
    TrackingMode mode() const { return mode_; }

private:
    det::Precision precision_ = det::Precision::Float;
    det::SizeClass size_ = det::SizeClass::Small;
    TrackingMode mode_ = TrackingMode::RateTrack;
    std::unique_ptr<det::FloatDetector> float_;
    std::unique_ptr<quant::QuantizedDetector> quant_;
};

std::vector<LabeledFrame> frames_from_manifest(const fs::path& manifest_path) {
    const DatasetManifest m = load_manifest(manifest_path);
    return load_frames(m, manifest_path.parent_path());
}

json train_config_json(const det::TrainConfig& c) {
    return {{"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"learning_rate", c.learning_rate},
            {"cosine_decay", c.cosine_decay},
            {"final_lr_fraction", c.final_lr_fraction},
            {"jitter_px", c.jitter_px},
            {"seed", c.seed},
            {"neg_pos_ratio", c.neg_pos_ratio},
            {"iou_pos_threshold", c.iou_pos_threshold},
            {"iou_neg_threshold", c.iou_neg_threshold}};
}

det::TrainConfig train_config_from(const json& j, det::TrainConfig c = {}) {
    for (const auto& [k, v] : j.items()) {
        if (k == "epochs") c.epochs = v.get<int>();
        else if (k == "batch_size") c.batch_size = v.get<int>();
        else if (k == "learning_rate") c.learning_rate = v.get<double>();
        else if (k == "cosine_decay") c.cosine_decay = v.get<bool>();
        else if (k == "final_lr_fraction") c.final_lr_fraction = v.get<double>();
        else if (k == "jitter_px") c.jitter_px = v.get<int>();
        else if (k == "seed") c.seed = v.get<std::uint64_t>();
        else if (k == "neg_pos_ratio") c.neg_pos_ratio = v.get<double>();
        else if (k == "iou_pos_threshold") c.iou_pos_threshold = v.get<double>();
        else if (k == "iou_neg_threshold") c.iou_neg_threshold = v.get<double>();
        else throw ConfigError("train config: unknown key '" + k + "'");
    }
    c.validate();
    return c;
}

// ---- commands -------------------------------------------------------------

struct GenerateArgs {
    std::string config;
    int observations = 1;
    int frames_per_obs = 1;
    std::string mode;
    std::uint64_t seed = 1;
    std::optional<int> rso_count;
    std::optional<int> rso_min;
    std::optional<int> rso_max;
    std::string out;
};

DatasetManifest run_generate(const GenerateArgs& a) {
    SceneConfig base = a.config.empty() ? SceneConfig{} : scene_config_from_json(read_text(a.config));
    if (!a.mode.empty()) base.tracking_mode = parse_tracking_mode(a.mode);
    if (a.rso_count) base.rso_count = *a.rso_count;
    std::optional<RsoCountRange> range;
    if (a.rso_min || a.rso_max) {
        if (!a.rso_min || !a.rso_max) throw ConfigError("--rso-min and --rso-max must be given together");
        range = RsoCountRange{*a.rso_min, *a.rso_max};
    }
    const auto frames = generate_observation_set(base, a.observations, a.frames_per_obs, a.seed, range);
    const DatasetManifest m = write_frames(frames, a.out);
    save_manifest(fs::path(a.out) / "manifest.json", m);
    std::size_t boxes = 0;
    for (const auto& r : m.records) boxes += r.boxes.size();
    std::cout << "generated " << m.records.size() << " frames, " << boxes << " boxes -> "
              << (fs::path(a.out) / "manifest.json").string() << '\n';
    return m;
}

void run_split(const fs::path& manifest_path, double fraction, std::uint64_t seed, const fs::path& out) {
    const DatasetManifest m = load_manifest(manifest_path);
    if (m.augmentation_applied) {
        spdlog::warn("splitting an augmented manifest places transforms of one frame in both splits");
    }
    auto [train, val] = split_dataset(m.records, fraction, seed);
    train.augmentation_applied = val.augmentation_applied = m.augmentation_applied;
    fs::create_directories(out);
    save_manifest(out / "train.json", rebase_manifest(train, manifest_path.parent_path(), out));
    save_manifest(out / "val.json", rebase_manifest(val, manifest_path.parent_path(), out));
    std::cout << "split " << m.records.size() << " records -> " << train.records.size() << " train, "
              << val.records.size() << " val\n";
}

void run_augment(const fs::path& manifest_path, const fs::path& out) {
    const DatasetManifest m = load_manifest(manifest_path);
    const DatasetManifest aug = augment_x8(m, manifest_path.parent_path(), out);
    save_manifest(out / "manifest.json", aug);
    std::size_t before = 0, after = 0;
    for (const auto& r : m.records) before += r.boxes.size();
    for (const auto& r : aug.records) after += r.boxes.size();
    std::cout << "augmented " << m.records.size() << " -> " << aug.records.size() << " records, " << before << " -> "
              << after << " boxes\n";
}

fs::path run_train(const fs::path& train_manifest, const fs::path& val_manifest, det::SizeClass size,
                   const det::TrainConfig& tc, const fs::path& out) {
    const auto train = frames_from_manifest(train_manifest);
    const auto val = frames_from_manifest(val_manifest);
    spdlog::info("training {} model on {} frames, validating on {}", det::to_string(size), train.size(), val.size());
    const det::TrainResult r = det::train(train, val, det::model_config_for(size), tc, [](const det::EpochLog& e) {
        spdlog::info("epoch {:3d}  loss {:.4f}  val P {:.4f} R {:.4f} F1 {:.4f}", e.epoch, e.train_loss,
                     e.val_precision, e.val_recall, e.val_f1);
    });
    fs::create_directories(out);
    const fs::path ckpt = out / "model.satdet";
    det::save_model(r.model, ckpt);
    json log = json::array();
    for (const auto& e : r.log) {
        log.push_back({{"epoch", e.epoch},
                       {"train_loss", e.train_loss},
                       {"val_precision", e.val_precision},
                       {"val_recall", e.val_recall},
                       {"val_f1", e.val_f1}});
    }
    write_json(out / "train_log.json", {{"config", train_config_json(tc)},
                                        {"model_size", det::to_string(size)},
                                        {"best_epoch", r.best_epoch},
                                        {"epochs", log}});
    const auto& best = r.log[static_cast<std::size_t>(r.best_epoch - 1)];
    std::cout << "best epoch " << r.best_epoch << " (val F1 " << best.val_f1 << ") -> " << ckpt.string() << '\n';
    return ckpt;
}

fs::path run_quantize(const fs::path& model_path, const fs::path& calib_manifest, std::size_t n_frames,
                      const fs::path& out, const std::string& report_path) {
    const det::DetectorModel model = det::load_model(model_path);
    const auto frames = frames_from_manifest(calib_manifest);
    if (frames.empty()) throw DataError("calibration manifest " + calib_manifest.string() + " has no records");
    if (n_frames < 16) spdlog::warn("calibrating on fewer than 16 frames");
    const det::InferenceGraph graph = det::fold_model(model);
    quant::Calibrator cal(graph);
    for (std::size_t i = 0; i < std::min(n_frames, frames.size()); ++i) cal.add(frames[i].pixels);
    quant::ConversionReport report;
    const quant::QuantizedModel q = quant::convert_model(graph, cal.result(), &report);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    quant::save_quantized(q, out);
    std::cout << quant::conversion_report_table(report);
    if (!report_path.empty()) {
        json tensors = json::array();
        for (const auto& t : report.tensors) {
            tensors.push_back({{"name", t.name},
                               {"scale", t.scale},
                               {"snr_db", std::isfinite(t.snr_db) ? json(t.snr_db) : json(nullptr)},
                               {"max_abs_error", t.max_abs_error}});
        }
        write_json(report_path, {{"calibration_frames", cal.result().frames}, {"tensors", tensors}});
    }
    std::cout << "calibrated on " << cal.result().frames << " frames; float " << fs::file_size(model_path)
              << " bytes -> quantized " << fs::file_size(out) << " bytes -> " << out.string() << '\n';
    return out;
}

eval::EvalReport evaluate(const AnyDetector& detector, const std::vector<LabeledFrame>& frames,
                          const det::DetectOptions& opts, double match_iou) {
    eval::Evaluator ev(match_iou, opts.confidence_threshold);
    for (std::size_t i = 0; i < frames.size(); ++i) {
        ev.add_frame(detector.detect(frames[i].pixels, opts), frames[i].boxes, std::to_string(i));
    }
    return ev.report(detector.name());
}

void run_eval(const std::vector<std::string>& models, const fs::path& manifest, const det::DetectOptions& opts,
              double match_iou, bool baseline, const std::string& out) {
    const auto frames = frames_from_manifest(manifest);
    std::vector<eval::EvalReport> reports;
    for (const auto& m : models) reports.push_back(evaluate(AnyDetector(m), frames, opts, match_iou));
    if (baseline) {
        eval::Evaluator ev(match_iou, opts.confidence_threshold);
        for (std::size_t i = 0; i < frames.size(); ++i) {
            const auto shape = frames[i].tracking_mode == TrackingMode::RateTrack ? eval::SourceShape::Point
                                                                                  : eval::SourceShape::Streak;
            ev.add_frame(eval::baseline_detect(frames[i].pixels, shape), frames[i].boxes, std::to_string(i));
        }
        reports.push_back(ev.report("baseline"));
    }
    std::cout << eval::eval_table(reports);
    if (!out.empty()) {
        json arr = json::array();
        for (const auto& r : reports) arr.push_back(eval::to_json(r));
        write_json(out, {{"manifest", manifest.string()}, {"reports", arr}});
    }
}

void run_infer(const fs::path& model, const fs::path& image, const det::DetectOptions& opts, const fs::path& out) {
    const AnyDetector detector(model);
    const Image16 img = read_image16(image);
    const auto dets = detector.detect(img, opts);
    fs::create_directories(out);
    const std::string stem = image.stem().string();
    write_json(out / (stem + "_detections.json"), {{"image", image.string()},
                                                   {"model", detector.name()},
                                                   {"confidence_threshold", opts.confidence_threshold},
                                                   {"nms_iou", opts.nms_iou},
                                                   {"detections", detections_json(dets)}});
    write_png_rgb(out / (stem + "_annotated.png"), eval::render_annotated(img, dets, {}));
    std::cout << dets.size() << " detections -> " << (out / (stem + "_detections.json")).string() << '\n';
}

void run_bench(const std::vector<std::string>& models, const std::string& manifest, std::size_t n_frames,
               std::size_t warmup, std::uint64_t seed, const std::string& mode, const det::DetectOptions& opts,
               const std::string& out) {
    std::vector<Image16> frames;
    if (!manifest.empty()) {
        const auto loaded = frames_from_manifest(manifest);
        if (loaded.empty()) throw DataError("benchmark manifest " + manifest + " has no records");
        for (std::size_t i = 0; i < n_frames; ++i) frames.push_back(loaded[i % loaded.size()].pixels);
    } else {
        SceneConfig base;
        if (!mode.empty()) base.tracking_mode = parse_tracking_mode(mode);
        for (const auto& f : generate_observation_set(base, static_cast<int>(n_frames), 1, seed, RsoCountRange{0, 3})) {
            frames.push_back(f.pixels);
        }
    }
    std::vector<eval::LatencyReport> reports;
    for (const auto& m : models) {
        const AnyDetector d(m);
        reports.push_back(eval::benchmark_latency([&](const Image16& img) { (void)d.detect(img, opts); }, frames,
                                                  warmup, d.name()));
    }
    std::cout << eval::latency_table(reports);
    if (!out.empty()) {
        json arr = json::array();
        for (const auto& r : reports) arr.push_back(eval::to_json(r));
        write_json(out, {{"warmup", warmup}, {"reports", arr}});
    }
}

/// generate -> split -> augment -> train -> quantize -> eval in one workspace.
void run_pipeline(const fs::path& config_path, const std::string& workspace_flag) {
    const json cfg = json::parse(read_text(config_path));
    const fs::path ws = !workspace_flag.empty() ? fs::path(workspace_flag)
                                                : fs::path(cfg.value("workspace_dir", std::string("workspace")));
    GenerateArgs g;
    g.observations = cfg.value("observations", 15);
    g.frames_per_obs = cfg.value("frames_per_obs", 1);
    g.seed = cfg.value("seed", std::uint64_t{1});
    if (cfg.contains("rso_count_range")) {
        g.rso_min = cfg["rso_count_range"].at(0).get<int>();
        g.rso_max = cfg["rso_count_range"].at(1).get<int>();
    }
    g.out = (ws / "raw").string();
    if (cfg.contains("scene")) {
        fs::create_directories(ws);
        std::ofstream(ws / "scene.json") << cfg["scene"].dump(2);
        g.config = (ws / "scene.json").string();
    }
    run_generate(g);
    run_split(ws / "raw" / "manifest.json", cfg.value("train_fraction", 2.0 / 3.0),
              cfg.value("split_seed", g.seed), ws / "split");
    run_augment(ws / "split" / "train.json", ws / "train");
    run_augment(ws / "split" / "val.json", ws / "val");

    const det::TrainConfig tc = train_config_from(cfg.value("train", json::object()));
    const auto size = det::parse_size_class(cfg.value("model_size", std::string("small")));
    const fs::path ckpt = run_train(ws / "train" / "manifest.json", ws / "val" / "manifest.json", size, tc, ws / "model");
    const fs::path qckpt = run_quantize(ckpt, ws / "train" / "manifest.json", cfg.value("calibration_frames", 16),
                                        ws / "model" / "model_int8.satdet", (ws / "model" / "quant_report.json").string());
    const json ev = cfg.value("eval", json::object());
    const det::DetectOptions opts{ev.value("confidence_threshold", 0.25), ev.value("nms_iou", 0.45)};
    run_eval({ckpt.string(), qckpt.string()}, ws / "val" / "manifest.json", opts, ev.value("match_iou", 0.3), false,
             (ws / "eval.json").string());
}

void init_logging() {
    spdlog::set_default_logger(spdlog::stderr_color_st("satdet"));
    spdlog::set_pattern("[%H:%M:%S] %^%l%$ %v");
    spdlog::set_level(spdlog::level::info);
    if (const char* lvl = std::getenv("SATDET_LOG_LEVEL")) spdlog::set_level(spdlog::level::from_str(lvl));
}

} // namespace

int main(int argc, char** argv) {
    init_logging();
    CLI::App app{"Synthetic space-imagery RSO detector: generate, train, quantize, evaluate"};
    app.require_subcommand(1);

    GenerateArgs gen;
    auto* generate = app.add_subcommand("generate", "Synthesize labeled frames");
    generate->add_option("--config", gen.config, "SceneConfig JSON file")->check(CLI::ExistingFile);
    generate->add_option("--observations,-n", gen.observations, "Number of observations")->check(CLI::PositiveNumber);
    generate->add_option("--frames-per-obs,-k", gen.frames_per_obs, "Frames per observation")->check(CLI::PositiveNumber);
    generate->add_option("--mode", gen.mode, "rate_track or sidereal");
    generate->add_option("--seed", gen.seed, "Master seed");
    generate->add_option("--rso-count", gen.rso_count, "RSOs per frame");
    generate->add_option("--rso-min", gen.rso_min, "Lower bound of a per-observation RSO count range");
    generate->add_option("--rso-max", gen.rso_max, "Upper bound of a per-observation RSO count range");
    generate->add_option("--out", gen.out, "Output directory")->required();

    std::string manifest, out, report;
    double fraction = 2.0 / 3.0;
    std::uint64_t seed = 1;
    auto* split = app.add_subcommand("split", "Partition a manifest into train.json and val.json");
    split->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
    split->add_option("--train-fraction", fraction);
    split->add_option("--seed", seed);
    split->add_option("--out", out)->required();

    auto* augment = app.add_subcommand("augment", "Write the 8 dihedral copies of every frame");
    augment->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
    augment->add_option("--out", out)->required();

    std::string train_manifest, val_manifest, size_name = "small", train_config;
    det::TrainConfig tc;
    auto* train = app.add_subcommand("train", "Train a float detector");
    train->add_option("--train", train_manifest)->required()->check(CLI::ExistingFile);
    train->add_option("--val", val_manifest)->required()->check(CLI::ExistingFile);
    train->add_option("--size", size_name, "small or large");
    train->add_option("--config", train_config, "TrainConfig JSON file")->check(CLI::ExistingFile);
    train->add_option("--epochs", tc.epochs);
    train->add_option("--batch-size", tc.batch_size);
    train->add_option("--lr", tc.learning_rate);
    train->add_option("--seed", tc.seed);
    train->add_option("--out", out, "Output directory")->required();

    std::string model;
    std::size_t calib_frames = 16;
    auto* quantize = app.add_subcommand("quantize", "Convert a float checkpoint to int8");
    quantize->add_option("--model", model)->required();
    quantize->add_option("--calib", manifest, "Manifest of calibration frames")->required()->check(CLI::ExistingFile);
    quantize->add_option("--frames", calib_frames, "Calibration frame count");
    quantize->add_option("--out", out, "Quantized checkpoint path")->required();
    quantize->add_option("--report", report, "Conversion report JSON");

    det::DetectOptions opts;
    std::string image;
    auto* infer = app.add_subcommand("infer", "Detect RSOs in one image");
    infer->add_option("--model", model)->required();
    infer->add_option("--image", image)->required()->check(CLI::ExistingFile);
    infer->add_option("--threshold", opts.confidence_threshold);
    infer->add_option("--nms-iou", opts.nms_iou);
    infer->add_option("--seed", seed, "Accepted for uniformity; inference is deterministic");
    infer->add_option("--out", out)->required();

    std::vector<std::string> models;
    double match_iou = 0.3;
    bool baseline = false;
    auto* evalc = app.add_subcommand("eval", "Precision / recall / F1 on a labeled manifest");
    evalc->add_option("--model", models, "Checkpoint (repeatable)");
    evalc->add_option("--manifest", manifest)->required()->check(CLI::ExistingFile);
    evalc->add_option("--threshold", opts.confidence_threshold);
    evalc->add_option("--nms-iou", opts.nms_iou);
    evalc->add_option("--match-iou", match_iou);
    evalc->add_flag("--baseline", baseline, "Add the classical baseline detector as a row");
    evalc->add_option("--seed", seed, "Accepted for uniformity; evaluation is deterministic");
    evalc->add_option("--out", out, "Report JSON");

    std::size_t bench_frames = 100, warmup = 5;
    std::string mode;
    auto* bench = app.add_subcommand("bench", "Per-frame inference latency");
    bench->add_option("--model", models, "Checkpoint (repeatable)")->required();
    bench->add_option("--manifest", manifest, "Frames to time (cycled); synthesized when omitted");
    bench->add_option("--frames", bench_frames)->check(CLI::PositiveNumber);
    bench->add_option("--warmup", warmup);
    bench->add_option("--seed", seed, "Seed for synthesized frames");
    bench->add_option("--mode", mode, "Tracking mode of synthesized frames");
    bench->add_option("--threshold", opts.confidence_threshold);
    bench->add_option("--out", out, "Report JSON");

    std::string pipeline_config, workspace;
    auto* pipeline = app.add_subcommand("pipeline", "Run generate, split, augment, train, quantize and eval");
    pipeline->add_option("--config", pipeline_config, "Pipeline JSON file")->required()->check(CLI::ExistingFile);
    pipeline->add_option("--workspace", workspace, "Overrides workspace_dir");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*generate) {
            run_generate(gen);
        } else if (*split) {
            run_split(manifest, fraction, seed, out);
        } else if (*augment) {
            run_augment(manifest, out);
        } else if (*train) {
            if (!train_config.empty()) {
                det::TrainConfig from_file = train_config_from(json::parse(read_text(train_config)));
                // Flags given explicitly override the file.
                if (train->count("--epochs")) from_file.epochs = tc.epochs;
                if (train->count("--batch-size")) from_file.batch_size = tc.batch_size;
                if (train->count("--lr")) from_file.learning_rate = tc.learning_rate;
                if (train->count("--seed")) from_file.seed = tc.seed;
                tc = from_file;
            }
            run_train(train_manifest, val_manifest, det::parse_size_class(size_name), tc, out);
        } else if (*quantize) {
            run_quantize(model, manifest, calib_frames, out, report);
        } else if (*infer) {
            run_infer(model, image, opts, out);
        } else if (*evalc) {
            if (models.empty() && !baseline) throw ConfigError("eval needs at least one --model or --baseline");
            run_eval(models, manifest, opts, match_iou, baseline, out);
        } else if (*bench) {
            run_bench(models, manifest, bench_frames, warmup, seed, mode, opts, out);
        } else if (*pipeline) {
            run_pipeline(pipeline_config, workspace);
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const json::exception& e) {
        std::cerr << "error: malformed JSON: " << e.what() << '\n';
        return 2;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return 3;
    }
    return 0;
}
