#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "satdet/error.hpp"

namespace satdet {

/// Row-major single-channel raster.
template <typename T>
class Image {
public:
    Image() = default;
    Image(int width, int height, T fill = T{})
        : width_(width), height_(height) {
        if (width <= 0 || height <= 0) {
            throw ConfigError("image dimensions must be positive");
        }
        pixels_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
    }

    int width() const { return width_; }
    int height() const { return height_; }
    std::size_t size() const { return pixels_.size(); }
    bool empty() const { return pixels_.empty(); }

    T& at(int x, int y) { return pixels_[index(x, y)]; }
    const T& at(int x, int y) const { return pixels_[index(x, y)]; }

    std::span<T> pixels() { return pixels_; }
    std::span<const T> pixels() const { return pixels_; }
    std::span<T> row(int y) { return std::span<T>(pixels_).subspan(index(0, y), width_); }
    std::span<const T> row(int y) const {
        return std::span<const T>(pixels_).subspan(index(0, y), width_);
    }

    friend bool operator==(const Image&, const Image&) = default;

private:
    std::size_t index(int x, int y) const {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
               static_cast<std::size_t>(x);
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<T> pixels_;
};

using Image16 = Image<std::uint16_t>;
using ImageD = Image<double>;

struct Rgb8 {
    std::uint8_t r = 0, g = 0, b = 0;
    friend bool operator==(const Rgb8&, const Rgb8&) = default;
};
using ImageRgb = Image<Rgb8>;

} // namespace satdet
