#pragma once

#include <string>
#include <string_view>

namespace satdet {

enum class TrackingMode { RateTrack, Sidereal };

std::string_view to_string(TrackingMode mode);
/// Accepts "rate_track" / "sidereal" (case-insensitive, '-' or '_').
TrackingMode parse_tracking_mode(std::string_view text);

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

/// Axis-aligned box in continuous pixel coordinates. Pixel (c, r) covers
/// [c, c+1) x [r, r+1), so a W x H image spans [0, W] x [0, H].
struct BoundingBox {
    double x_min = 0.0;
    double y_min = 0.0;
    double x_max = 0.0;
    double y_max = 0.0;
    int class_id = 0;

    double width() const { return x_max - x_min; }
    double height() const { return y_max - y_min; }
    double area() const { return width() * height(); }
    Point2 center() const { return {0.5 * (x_min + x_max), 0.5 * (y_min + y_max)}; }
    bool valid() const { return x_min < x_max && y_min < y_max && class_id == 0; }
    bool inside(double width_px, double height_px) const {
        return x_min >= 0.0 && y_min >= 0.0 && x_max <= width_px && y_max <= height_px;
    }

    friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

/// Intersection over union; 0 for disjoint or degenerate boxes.
double iou(const BoundingBox& a, const BoundingBox& b);

} // namespace satdet
