#include "satdet/eval/annotate.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

namespace satdet::eval {
namespace {

constexpr Rgb8 kDetection{40, 230, 40};
constexpr Rgb8 kTruth{235, 40, 40};

// 3x5 glyphs, one row per entry, MSB = left column.
constexpr std::array<std::array<std::uint8_t, 5>, 11> kGlyphs = {{
    {7, 5, 5, 5, 7}, {2, 6, 2, 2, 7}, {7, 1, 7, 4, 7}, {7, 1, 7, 1, 7}, {5, 5, 7, 1, 1}, {7, 4, 7, 1, 7},
    {7, 4, 7, 5, 7}, {7, 1, 1, 1, 1}, {7, 5, 7, 5, 7}, {7, 5, 7, 1, 7}, {0, 0, 0, 0, 2},  // '.'
}};

void put(ImageRgb& img, int x, int y, Rgb8 c) {
    if (x >= 0 && y >= 0 && x < img.width() && y < img.height()) img.at(x, y) = c;
}

void draw_box(ImageRgb& img, const BoundingBox& b, Rgb8 c, bool dashed) {
    const int x0 = static_cast<int>(std::floor(b.x_min));
    const int y0 = static_cast<int>(std::floor(b.y_min));
    const int x1 = std::max(x0, static_cast<int>(std::ceil(b.x_max)) - 1);
    const int y1 = std::max(y0, static_cast<int>(std::ceil(b.y_max)) - 1);
    auto on = [&](int t) { return !dashed || (t / 2) % 2 == 0; };
    for (int x = x0; x <= x1; ++x) {
        if (!on(x - x0)) continue;
        put(img, x, y0, c);
        put(img, x, y1, c);
    }
    for (int y = y0; y <= y1; ++y) {
        if (!on(y - y0)) continue;
        put(img, x0, y, c);
        put(img, x1, y, c);
    }
}

void draw_text(ImageRgb& img, int x, int y, const std::string& text, Rgb8 c) {
    for (char ch : text) {
        const int g = ch == '.' ? 10 : (ch >= '0' && ch <= '9' ? ch - '0' : -1);
        if (g >= 0) {
            for (int r = 0; r < 5; ++r) {
                for (int col = 0; col < 3; ++col) {
                    if (kGlyphs[static_cast<std::size_t>(g)][static_cast<std::size_t>(r)] & (4 >> col)) {
                        put(img, x + col, y + r, c);
                    }
                }
            }
        }
        x += 4;
    }
}

std::string confidence_label(double conf) {
    const int hundredths = static_cast<int>(std::lround(std::clamp(conf, 0.0, 1.0) * 100.0));
    std::string s = std::to_string(hundredths / 100) + "." + std::to_string((hundredths % 100) / 10) +
                    std::to_string(hundredths % 10);
    return s;
}

} // namespace

ImageRgb tone_map(const Image16& frame) {
    std::vector<std::uint16_t> v(frame.pixels().begin(), frame.pixels().end());
    auto pct = [&](double q) {
        const auto k = static_cast<std::size_t>(q * static_cast<double>(v.size() - 1));
        std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
        return static_cast<double>(v[k]);
    };
    const double lo = pct(0.005);
    const double hi = std::max(pct(0.995), lo + 1.0);
    ImageRgb out(frame.width(), frame.height());
    for (int y = 0; y < frame.height(); ++y) {
        for (int x = 0; x < frame.width(); ++x) {
            const double t = std::clamp((frame.at(x, y) - lo) / (hi - lo), 0.0, 1.0);
            const auto g = static_cast<std::uint8_t>(std::lround(t * 255.0));
            out.at(x, y) = {g, g, g};
        }
    }
    return out;
}

ImageRgb render_annotated(const Image16& frame, std::span<const Detection> detections,
                          std::span<const BoundingBox> ground_truth) {
    ImageRgb img = tone_map(frame);
    for (const auto& b : ground_truth) draw_box(img, b, kTruth, true);
    for (const auto& d : detections) {
        draw_box(img, d.box, kDetection, false);
        const int tx = static_cast<int>(std::floor(d.box.x_min));
        int ty = static_cast<int>(std::floor(d.box.y_min)) - 7;
        if (ty < 0) ty = static_cast<int>(std::ceil(d.box.y_max)) + 2;
        draw_text(img, tx, ty, confidence_label(d.confidence), kDetection);
    }
    return img;
}

} // namespace satdet::eval
