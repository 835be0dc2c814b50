#pragma once

#include <stdexcept>
#include <string>

namespace satdet {

/// Invalid user-supplied configuration (scene recipe, thresholds, flags).
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Malformed or inconsistent data read from disk or passed between stages.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not agree for the requested operation.
class ShapeError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

} // namespace satdet
