#include "satdet/eval/baseline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace satdet::eval {
namespace {

double median_of(std::vector<double>& v) {
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    const double hi = v[mid];
    if (v.size() % 2 == 1) return hi;
    const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lo + hi);
}

} // namespace

BackgroundStats background_stats(const Image16& frame) {
    std::vector<double> v(frame.pixels().begin(), frame.pixels().end());
    BackgroundStats s;
    s.median = median_of(v);
    for (double& x : v) x = std::abs(x - s.median);
    s.sigma = 1.4826 * median_of(v);
    return s;
}

std::vector<Component> extract_components(const Image16& frame, const BaselineOptions& options) {
    const BackgroundStats bg = background_stats(frame);
    const double threshold = bg.median + options.k_sigma * bg.sigma;
    const int w = frame.width(), h = frame.height();
    std::vector<int> label(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), -1);
    std::vector<Component> out;
    std::vector<std::pair<int, int>> stack;
    std::vector<std::pair<int, int>> members;
    int next = 0;

    for (int y0 = 0; y0 < h; ++y0) {
        for (int x0 = 0; x0 < w; ++x0) {
            const std::size_t i0 = static_cast<std::size_t>(y0) * w + x0;
            if (label[i0] >= 0 || frame.at(x0, y0) <= threshold) continue;
            members.clear();
            stack.assign(1, {x0, y0});
            label[i0] = next;
            while (!stack.empty()) {
                const auto [x, y] = stack.back();
                stack.pop_back();
                members.emplace_back(x, y);
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int nx = x + dx, ny = y + dy;
                        if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
                        const std::size_t ni = static_cast<std::size_t>(ny) * w + nx;
                        if (label[ni] >= 0 || frame.at(nx, ny) <= threshold) continue;
                        label[ni] = next;
                        stack.emplace_back(nx, ny);
                    }
                }
            }
            ++next;
            if (static_cast<int>(members.size()) < options.min_area_px) continue;

            Component c;
            c.area_px = static_cast<int>(members.size());
            int xmin = w, ymin = h, xmax = -1, ymax = -1;
            double sw = 0.0, sx = 0.0, sy = 0.0, peak = 0.0;
            for (auto [x, y] : members) {
                const double v = frame.at(x, y) - bg.median;
                xmin = std::min(xmin, x);
                xmax = std::max(xmax, x);
                ymin = std::min(ymin, y);
                ymax = std::max(ymax, y);
                sw += v;
                sx += v * (x + 0.5);
                sy += v * (y + 0.5);
                peak = std::max(peak, v);
            }
            c.centroid = {sx / sw, sy / sw};
            double cxx = 0.0, cyy = 0.0, cxy = 0.0;
            for (auto [x, y] : members) {
                const double v = frame.at(x, y) - bg.median;
                const double ux = x + 0.5 - c.centroid.x, uy = y + 0.5 - c.centroid.y;
                cxx += v * ux * ux;
                cyy += v * uy * uy;
                cxy += v * ux * uy;
            }
            cxx /= sw;
            cyy /= sw;
            cxy /= sw;
            const double tr = 0.5 * (cxx + cyy);
            const double disc = std::sqrt(std::max(0.0, 0.25 * (cxx - cyy) * (cxx - cyy) + cxy * cxy));
            const double major = tr + disc, minor = tr - disc;
            c.elongation = minor > 0.0 ? std::sqrt(major / minor) : std::numeric_limits<double>::infinity();
            c.shape = c.elongation < options.elongation_split ? SourceShape::Point : SourceShape::Streak;
            c.peak_snr = bg.sigma > 0.0 ? peak / bg.sigma : std::numeric_limits<double>::infinity();
            const double m = options.box_margin_px;
            c.box = {std::max(0.0, xmin - m), std::max(0.0, ymin - m), std::min<double>(w, xmax + 1 + m),
                     std::min<double>(h, ymax + 1 + m)};
            out.push_back(c);
        }
    }
    return out;
}

std::vector<Detection> baseline_detect(const Image16& frame, SourceShape expected, const BaselineOptions& options) {
    std::vector<Detection> out;
    for (const Component& c : extract_components(frame, options)) {
        if (c.shape != expected) continue;
        out.push_back({c.box, std::min(1.0, c.peak_snr / options.full_confidence_snr)});
    }
    return out;
}

} // namespace satdet::eval
