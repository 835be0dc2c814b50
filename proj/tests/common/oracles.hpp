#pragma once

#include <numeric>
#include <random>
#include <vector>

#include "satdet/detection.hpp"
#include "satdet/geometry.hpp"

namespace satdet::testutil {

inline BoundingBox random_box(std::mt19937_64& rng, double extent) {
    std::uniform_real_distribution<double> pos(0.0, extent - 20.0), size(1.0, 20.0);
    const double x = pos(rng), y = pos(rng);
    return {x, y, x + size(rng), y + size(rng)};
}

/// Priority-queue formulation: repeatedly take the best remaining box and
/// discard everything that overlaps it.
inline std::vector<Detection> nms_oracle(std::vector<Detection> dets, double thr) {
    std::vector<std::size_t> remaining(dets.size());
    std::iota(remaining.begin(), remaining.end(), 0);
    std::vector<Detection> kept;
    while (!remaining.empty()) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < remaining.size(); ++i) {
            const auto& a = dets[remaining[i]];
            const auto& b = dets[remaining[best]];
            if (a.confidence > b.confidence || (a.confidence == b.confidence && remaining[i] < remaining[best])) best = i;
        }
        const Detection top = dets[remaining[best]];
        kept.push_back(top);
        std::vector<std::size_t> next;
        for (std::size_t i = 0; i < remaining.size(); ++i) {
            if (i != best && iou(dets[remaining[i]].box, top.box) < thr) next.push_back(remaining[i]);
        }
        remaining = std::move(next);
    }
    return kept;
}

} // namespace satdet::testutil
