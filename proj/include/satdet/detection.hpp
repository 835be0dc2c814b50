#pragma once

#include "satdet/geometry.hpp"

namespace satdet {

/// One detector output; confidence is the sigmoid of the objectness logit.
struct Detection {
    BoundingBox box;
    double confidence = 0.0;

    friend bool operator==(const Detection&, const Detection&) = default;
};

} // namespace satdet
