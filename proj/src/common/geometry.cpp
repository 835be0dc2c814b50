#include "satdet/geometry.hpp"

#include <algorithm>
#include <cctype>
#include <string>

#include "satdet/error.hpp"

namespace satdet {

std::string_view to_string(TrackingMode mode) {
    return mode == TrackingMode::RateTrack ? "rate_track" : "sidereal";
}

TrackingMode parse_tracking_mode(std::string_view text) {
    std::string norm;
    for (char c : text) {
        norm.push_back(c == '-' ? '_' : static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    if (norm == "rate_track" || norm == "ratetrack" || norm == "rate") {
        return TrackingMode::RateTrack;
    }
    if (norm == "sidereal") {
        return TrackingMode::Sidereal;
    }
    throw ConfigError("unknown tracking mode '" + std::string(text) +
                      "' (expected rate_track or sidereal)");
}

double iou(const BoundingBox& a, const BoundingBox& b) {
    const double ix = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
    const double iy = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
    if (ix <= 0.0 || iy <= 0.0) {
        return 0.0;
    }
    const double inter = ix * iy;
    // Sum the areas in a fixed order so that iou(a, b) == iou(b, a) bit for bit.
    const double area_a = a.area(), area_b = b.area();
    const double uni = (std::min(area_a, area_b) + std::max(area_a, area_b)) - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

} // namespace satdet
