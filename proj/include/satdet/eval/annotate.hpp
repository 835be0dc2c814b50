#pragma once

#include <span>

#include "satdet/detection.hpp"
#include "satdet/image.hpp"

namespace satdet::eval {

/// Maps the 0.5th..99.5th percentile range of the frame onto 0..255 gray.
ImageRgb tone_map(const Image16& frame);

/// Tone-mapped copy with detections as solid green boxes labelled with
/// their confidence (two decimals) and ground truth as dashed red boxes.
ImageRgb render_annotated(const Image16& frame, std::span<const Detection> detections,
                          std::span<const BoundingBox> ground_truth);

} // namespace satdet::eval
