#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "satdet/image.hpp"

namespace satdet::eval {

struct LatencyReport {
    std::string name;
    std::size_t n_images = 0;
    double mean_s = 0.0;
    double std_s = 0.0;  // sample standard deviation; 0 for one image
    double p50_s = 0.0;
    double p95_s = 0.0;
};

/// Summary statistics; percentiles interpolate linearly between order
/// statistics. Throws DataError on an empty sample.
LatencyReport latency_stats(std::vector<double> seconds, std::string name = {});

/// Times `run` once per frame, in order, with a steady clock. The first
/// `warmup` calls (cycling over the frames) are not recorded.
LatencyReport benchmark_latency(const std::function<void(const Image16&)>& run, std::span<const Image16> frames,
                                std::size_t warmup, std::string name = {});

} // namespace satdet::eval
