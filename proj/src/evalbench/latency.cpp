#include "satdet/eval/latency.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "satdet/error.hpp"

namespace satdet::eval {
namespace {

double percentile(const std::vector<double>& sorted, double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

} // namespace

LatencyReport latency_stats(std::vector<double> seconds, std::string name) {
    if (seconds.empty()) throw DataError("latency statistics need at least one measurement");
    LatencyReport r;
    r.name = std::move(name);
    r.n_images = seconds.size();
    const double n = static_cast<double>(seconds.size());
    r.mean_s = std::accumulate(seconds.begin(), seconds.end(), 0.0) / n;
    if (seconds.size() > 1) {
        double ss = 0.0;
        for (double s : seconds) ss += (s - r.mean_s) * (s - r.mean_s);
        r.std_s = std::sqrt(ss / (n - 1.0));
    }
    std::sort(seconds.begin(), seconds.end());
    r.p50_s = percentile(seconds, 0.50);
    r.p95_s = percentile(seconds, 0.95);
    return r;
}

LatencyReport benchmark_latency(const std::function<void(const Image16&)>& run, std::span<const Image16> frames,
                                std::size_t warmup, std::string name) {
    if (frames.empty()) throw DataError("latency benchmark needs at least one frame");
    for (std::size_t i = 0; i < warmup; ++i) run(frames[i % frames.size()]);
    std::vector<double> times;
    times.reserve(frames.size());
    for (const Image16& f : frames) {
        const auto t0 = std::chrono::steady_clock::now();
        run(f);
        const auto t1 = std::chrono::steady_clock::now();
        times.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    return latency_stats(std::move(times), std::move(name));
}

} // namespace satdet::eval
