#pragma once

#include <span>
#include <string>
#include <vector>

#include "satdet/detection.hpp"

namespace satdet::eval {

struct MatchedPair {
    std::size_t detection = 0;     // index into the detection list given to match_detections
    std::size_t ground_truth = 0;  // index into the ground-truth list
    double iou = 0.0;
};

struct MatchResult {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
    std::vector<MatchedPair> matched_pairs;
};

/// Drops detections below conf_thr, then visits the rest by descending
/// confidence (input order on ties); each claims the unmatched ground truth
/// of highest IoU (lowest index on ties) provided IoU >= iou_thr.
MatchResult match_detections(std::span<const Detection> detections, std::span<const BoundingBox> gts,
                             double iou_thr, double conf_thr);

struct FrameBreakdown {
    std::string id;
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
};

struct EvalReport {
    std::string name;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double confidence_threshold = 0.0;
    double iou_match_threshold = 0.0;
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
    std::size_t n_frames = 0;
    std::size_t n_targets = 0;  // ground-truth boxes
    std::vector<FrameBreakdown> frames;
};

/// P = tp/(tp+fp), R = tp/(tp+fn), F1 = 2PR/(P+R), with 0/0 taken as 0.
EvalReport precision_recall_f1(const MatchResult& m);
/// Same formulas from raw precision and recall.
double f1_score(double precision, double recall);

/// Accumulates per-frame matches into one report.
class Evaluator {
public:
    Evaluator(double iou_thr, double conf_thr) : iou_thr_(iou_thr), conf_thr_(conf_thr) {}

    const MatchResult& add_frame(std::span<const Detection> detections, std::span<const BoundingBox> gts,
                                 std::string id = {});
    EvalReport report(std::string name = {}) const;

private:
    double iou_thr_;
    double conf_thr_;
    MatchResult total_;
    MatchResult last_;
    std::vector<FrameBreakdown> frames_;
};

} // namespace satdet::eval
