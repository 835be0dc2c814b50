#pragma once

#include <vector>

#include "satdet/detection.hpp"
#include "satdet/image.hpp"

namespace satdet::eval {

enum class SourceShape { Point, Streak };

struct BaselineOptions {
    double k_sigma = 5.0;          // threshold = median + k_sigma * 1.4826 * MAD
    int min_area_px = 3;           // smaller components are treated as noise
    double elongation_split = 2.0; // Point below, Streak at or above
    double full_confidence_snr = 20.0;
    double box_margin_px = 2.0;    // grows the component extent toward the PSF wings
};

struct Component {
    BoundingBox box;  // pixel extent grown by box_margin_px, clamped to the frame
    int area_px = 0;
    Point2 centroid;
    double peak_snr = 0.0;
    double elongation = 1.0;  // major / minor axis from intensity-weighted second moments
    SourceShape shape = SourceShape::Point;
};

struct BackgroundStats {
    double median = 0.0;
    double sigma = 0.0;  // 1.4826 * MAD
};

BackgroundStats background_stats(const Image16& frame);

/// 8-connected components of pixels strictly above the threshold, in
/// raster order of their first pixel.
std::vector<Component> extract_components(const Image16& frame, const BaselineOptions& options = {});

/// Classical detector: components of the expected shape, confidence
/// min(1, peak_snr / full_confidence_snr).
std::vector<Detection> baseline_detect(const Image16& frame, SourceShape expected,
                                       const BaselineOptions& options = {});

} // namespace satdet::eval
