#include "satdet/eval/metrics.hpp"

#include <algorithm>
#include <numeric>

namespace satdet::eval {

MatchResult match_detections(std::span<const Detection> detections, std::span<const BoundingBox> gts,
                             double iou_thr, double conf_thr) {
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < detections.size(); ++i) {
        if (detections[i].confidence >= conf_thr) order.push_back(i);
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return detections[a].confidence > detections[b].confidence;
    });

    MatchResult m;
    std::vector<bool> claimed(gts.size(), false);
    for (std::size_t d : order) {
        double best = -1.0;
        std::size_t best_gt = 0;
        for (std::size_t g = 0; g < gts.size(); ++g) {
            if (claimed[g]) continue;
            const double v = iou(detections[d].box, gts[g]);
            if (v > best) {
                best = v;
                best_gt = g;
            }
        }
        if (best >= iou_thr && best >= 0.0) {
            claimed[best_gt] = true;
            m.matched_pairs.push_back({d, best_gt, best});
            ++m.tp;
        } else {
            ++m.fp;
        }
    }
    m.fn = gts.size() - m.tp;
    return m;
}

double f1_score(double precision, double recall) {
    return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

EvalReport precision_recall_f1(const MatchResult& m) {
    EvalReport r;
    r.tp = m.tp;
    r.fp = m.fp;
    r.fn = m.fn;
    r.n_targets = m.tp + m.fn;
    r.precision = m.tp + m.fp > 0 ? static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fp) : 0.0;
    r.recall = m.tp + m.fn > 0 ? static_cast<double>(m.tp) / static_cast<double>(m.tp + m.fn) : 0.0;
    r.f1 = f1_score(r.precision, r.recall);
    return r;
}

const MatchResult& Evaluator::add_frame(std::span<const Detection> detections, std::span<const BoundingBox> gts,
                                        std::string id) {
    last_ = match_detections(detections, gts, iou_thr_, conf_thr_);
    total_.tp += last_.tp;
    total_.fp += last_.fp;
    total_.fn += last_.fn;
    frames_.push_back({std::move(id), last_.tp, last_.fp, last_.fn});
    return last_;
}

EvalReport Evaluator::report(std::string name) const {
    EvalReport r = precision_recall_f1(total_);
    r.name = std::move(name);
    r.confidence_threshold = conf_thr_;
    r.iou_match_threshold = iou_thr_;
    r.n_frames = frames_.size();
    r.frames = frames_;
    return r;
}

} // namespace satdet::eval
