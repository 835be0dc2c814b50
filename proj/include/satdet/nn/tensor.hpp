#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "satdet/error.hpp"

namespace satdet::nn {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

/// Dense row-major array. Image tensors use NCHW.
template <typename T>
class BasicTensor {
public:
    using value_type = T;

    BasicTensor() = default;
    explicit BasicTensor(Shape shape, T fill = T{}) : shape_(std::move(shape)) {
        std::size_t n = 1;
        for (std::size_t d : shape_) {
            if (d == 0) {
                throw ShapeError("tensor dimensions must be >= 1, got " + shape_string(shape_));
            }
            n *= d;
        }
        data_.assign(n, fill);
    }
    BasicTensor(Shape shape, std::vector<T> data) : BasicTensor(std::move(shape)) {
        if (data.size() != data_.size()) {
            throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                             shape_string(shape_));
        }
        data_ = std::move(data);
    }

    const Shape& shape() const { return shape_; }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    T* ptr() { return data_.data(); }
    const T* ptr() const { return data_.data(); }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    /// NCHW element access.
    T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) { return data_[offset(n, c, h, w)]; }
    const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return data_[offset(n, c, h, w)];
    }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    template <typename U>
    BasicTensor<U> cast() const {
        BasicTensor<U> out(shape_);
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return out;
    }

    friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

private:
    std::size_t offset(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
        return ((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
    }

    Shape shape_;
    std::vector<T> data_;
};

using Tensor = BasicTensor<double>;
using TensorF = BasicTensor<float>;

inline std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

inline void require_rank4(const Shape& s, const char* what) {
    if (s.size() != 4) {
        throw ShapeError(std::string(what) + ": expected a rank-4 NCHW tensor, got " + shape_string(s));
    }
}

inline void require_same_shape(const Shape& a, const Shape& b, const char* what) {
    if (a != b) {
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
    }
}

} // namespace satdet::nn
