#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "satdet/det/model.hpp"
#include "satdet/scenegen.hpp"

namespace satdet::det {

struct TrainConfig {
    int epochs = 100;
    int batch_size = 2;
    double learning_rate = 1e-3;
    // Cosine decay from learning_rate down to learning_rate * final_lr_fraction
    // over all epochs. Set cosine_decay to false for a constant rate.
    bool cosine_decay = true;
    double final_lr_fraction = 0.02;
    std::uint64_t seed = 7;
    // Each training image is shifted by a fresh random offset in
    // [-jitter_px, jitter_px] input pixels per axis every epoch. 0 disables.
    int jitter_px = 8;
    double neg_pos_ratio = 3.0;
    double iou_pos_threshold = 0.5;
    double iou_neg_threshold = 0.4;
    // Validation settings used to pick the best epoch.
    double eval_confidence = 0.25;
    double eval_nms_iou = 0.45;
    double eval_match_iou = 0.3;

    void validate() const;
    /// Rate used throughout 1-based `epoch`.
    double learning_rate_at(int epoch) const;
};

struct EpochLog {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_precision = 0.0;
    double val_recall = 0.0;
    double val_f1 = 0.0;
};

struct TrainResult {
    DetectorModel model;  // weights of the best validation epoch
    std::vector<EpochLog> log;
    int best_epoch = 0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Deterministic given config.seed. All frames (train and val) must share
/// one tracking mode. The returned model is the epoch with the highest
/// validation F1, the later epoch winning ties.
TrainResult train(const std::vector<LabeledFrame>& train_frames, const std::vector<LabeledFrame>& val_frames,
                  const ModelConfig& model_config, const TrainConfig& config, const EpochCallback& on_epoch = {});

} // namespace satdet::det
