#include "satdet/det/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "satdet/det/detect.hpp"
#include "satdet/det/loss.hpp"
#include "satdet/error.hpp"
#include "satdet/eval/metrics.hpp"
#include "satdet/nn/optimizer.hpp"

namespace satdet::det {
namespace {

struct Sample {
    nn::TensorF input;  // [1, 1, H, W]
    std::vector<BoundingBox> boxes;  // input-pixel coordinates
    float fill = 0.0f;  // median input value, used for pixels uncovered by a shift
    AnchorTargets targets;
};

Sample make_sample(const LabeledFrame& f, const ModelConfig& mc, const std::vector<Anchor>& anchors,
                   const TrainConfig& tc) {
    Sample s;
    s.input = preprocess(f.pixels, mc.input_h, mc.input_w);
    const double sx = static_cast<double>(mc.input_w) / f.pixels.width();
    const double sy = static_cast<double>(mc.input_h) / f.pixels.height();
    for (const auto& b : f.boxes) s.boxes.push_back({b.x_min * sx, b.y_min * sy, b.x_max * sx, b.y_max * sy});
    std::vector<float> values(s.input.data().begin(), s.input.data().end());
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(values.size() / 2), values.end());
    s.fill = values[values.size() / 2];
    s.targets = make_targets(s.boxes, anchors, tc.iou_pos_threshold, tc.iou_neg_threshold);
    return s;
}

/// Writes `s` translated by (dx, dy) input pixels into `dst` and returns the
/// boxes that keep at least half their area inside the frame.
std::vector<BoundingBox> shifted_copy(const Sample& s, int dx, int dy, float* dst, int h, int w) {
    const float* src = s.input.ptr();
    for (int y = 0; y < h; ++y) {
        const int sy = y - dy;
        for (int x = 0; x < w; ++x) {
            const int sx = x - dx;
            dst[y * w + x] = (sy >= 0 && sy < h && sx >= 0 && sx < w) ? src[sy * w + sx] : s.fill;
        }
    }
    std::vector<BoundingBox> out;
    for (const auto& b : s.boxes) {
        const BoundingBox moved{b.x_min + dx, b.y_min + dy, b.x_max + dx, b.y_max + dy};
        const BoundingBox clipped{std::max(moved.x_min, 0.0), std::max(moved.y_min, 0.0),
                                  std::min(moved.x_max, static_cast<double>(w)),
                                  std::min(moved.y_max, static_cast<double>(h))};
        if (clipped.x_max > clipped.x_min && clipped.y_max > clipped.y_min && clipped.area() >= 0.5 * b.area()) {
            out.push_back(clipped);
        }
    }
    return out;
}

} // namespace

double TrainConfig::learning_rate_at(int epoch) const {
    if (!cosine_decay || epochs == 1) return learning_rate;
    const double progress = static_cast<double>(epoch - 1) / static_cast<double>(epochs - 1);
    const double floor = learning_rate * final_lr_fraction;
    return floor + 0.5 * (learning_rate - floor) * (1.0 + std::cos(std::numbers::pi * progress));
}

void TrainConfig::validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (!(final_lr_fraction >= 0.0 && final_lr_fraction <= 1.0)) {
        throw ConfigError("final_lr_fraction must lie in [0, 1]");
    }
    if (jitter_px < 0) throw ConfigError("jitter_px must be non-negative");
    if (neg_pos_ratio < 0.0) throw ConfigError("neg_pos_ratio must be non-negative");
    if (iou_neg_threshold > iou_pos_threshold) {
        throw ConfigError("iou_neg_threshold must not exceed iou_pos_threshold");
    }
}

TrainResult train(const std::vector<LabeledFrame>& train_frames, const std::vector<LabeledFrame>& val_frames,
                  const ModelConfig& model_config, const TrainConfig& config, const EpochCallback& on_epoch) {
    config.validate();
    if (train_frames.empty()) throw DataError("training set is empty");
    if (val_frames.empty()) throw DataError("validation set is empty");
    const TrackingMode mode = train_frames.front().tracking_mode;
    for (const auto* set : {&train_frames, &val_frames}) {
        for (const auto& f : *set) {
            if (f.tracking_mode != mode) {
                throw ConfigError("training data mixes tracking modes; train one model per mode");
            }
        }
    }

    DetectorModel model(model_config, mode);
    model.init(config.seed);
    const auto& anchors = model.anchors();
    std::vector<Sample> samples;
    samples.reserve(train_frames.size());
    for (const auto& f : train_frames) samples.push_back(make_sample(f, model_config, anchors, config));

    nn::Adam adam({.learning_rate = config.learning_rate});
    auto params = model.params();
    model.zero_grad();

    TrainResult result;
    double best_f1 = -1.0;
    std::vector<std::size_t> order(samples.size());
    const std::size_t per_image = anchors.size() * 5;
    const std::size_t hw = static_cast<std::size_t>(model_config.input_h) * model_config.input_w;

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        adam.set_learning_rate(config.learning_rate_at(epoch));
        std::iota(order.begin(), order.end(), 0);
        Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(epoch), 0));
        std::shuffle(order.begin(), order.end(), rng);
        Rng jitter_rng(derive_seed(config.seed, static_cast<std::uint64_t>(epoch), 1));
        std::uniform_int_distribution<int> shift(-config.jitter_px, config.jitter_px);

        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t n = std::min(order.size() - start, static_cast<std::size_t>(config.batch_size));
            nn::Tensor x({n, 1, static_cast<std::size_t>(model_config.input_h),
                          static_cast<std::size_t>(model_config.input_w)});
            std::vector<AnchorTargets> targets;
            for (std::size_t i = 0; i < n; ++i) {
                const Sample& s = samples[order[start + i]];
                if (config.jitter_px == 0) {
                    std::copy(s.input.data().begin(), s.input.data().end(), x.ptr() + i * hw);
                    targets.push_back(s.targets);
                    continue;
                }
                const int dx = shift(jitter_rng), dy = shift(jitter_rng);
                std::vector<float> moved(hw);
                const auto boxes = shifted_copy(s, dx, dy, moved.data(), model_config.input_h, model_config.input_w);
                std::copy(moved.begin(), moved.end(), x.ptr() + i * hw);
                targets.push_back(make_targets(boxes, anchors, config.iou_pos_threshold, config.iou_neg_threshold));
            }

            nn::Tape tape;
            const auto heads = model.forward(x, &tape);
            std::vector<double> preds;
            preds.reserve(n * per_image);
            for (std::size_t i = 0; i < n; ++i) {
                const auto flat = flatten_head_outputs(heads, model_config, i);
                preds.insert(preds.end(), flat.begin(), flat.end());
            }
            std::vector<double> grad(preds.size());
            const LossValue loss = ssd_loss(preds, targets, config.neg_pos_ratio, grad);

            std::vector<nn::Tensor> head_grads;
            for (const auto& h : heads) head_grads.emplace_back(h.shape());
            for (std::size_t i = 0; i < n; ++i) {
                scatter_head_grads(std::span<const double>(grad).subspan(i * per_image, per_image), model_config, i,
                                   head_grads);
            }
            model.backward(head_grads, tape);
            adam.step(params);
            model.zero_grad();
            loss_sum += loss.total;
            ++batches;
        }

        const FloatDetector detector(model);
        eval::Evaluator evaluator(config.eval_match_iou, config.eval_confidence);
        const DetectOptions opts{config.eval_confidence, config.eval_nms_iou};
        for (const auto& f : val_frames) evaluator.add_frame(detector.detect(f.pixels, opts), f.boxes);
        const eval::EvalReport rep = evaluator.report();

        EpochLog entry{epoch, loss_sum / static_cast<double>(batches), rep.precision, rep.recall, rep.f1};
        result.log.push_back(entry);
        if (rep.f1 >= best_f1) {
            best_f1 = rep.f1;
            result.best_epoch = epoch;
            result.model = model;
        }
        if (on_epoch) on_epoch(entry);
    }
    return result;
}

} // namespace satdet::det
