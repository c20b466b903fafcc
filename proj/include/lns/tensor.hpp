#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "lns/error.hpp"

namespace lns {

/// Ordered list of positive extents, e.g. (n, c, h, w).
class Shape {
public:
    Shape() = default;
    Shape(std::initializer_list<std::size_t> dims) : dims_(dims) { validate(); }
    explicit Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) { validate(); }

    std::size_t rank() const noexcept { return dims_.size(); }
    std::size_t operator[](std::size_t i) const { return dims_.at(i); }
    const std::vector<std::size_t>& dims() const noexcept { return dims_; }

    std::size_t numel() const noexcept {
        return std::accumulate(dims_.begin(), dims_.end(), std::size_t{1}, std::multiplies<>{});
    }

    std::string str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < dims_.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(dims_[i]);
        }
        return s + "]";
    }

    friend bool operator==(const Shape&, const Shape&) = default;

private:
    void validate() const {
        for (auto d : dims_)
            if (d == 0) throw ShapeError("shape " + str() + " has a zero extent");
    }

    std::vector<std::size_t> dims_;
};

/// Dense row-major tensor. Float and double instantiations share every
/// operation; double exists so gradient checks can run at 64-bit precision.
template <typename T>
class BasicTensor {
public:
    using value_type = T;

    BasicTensor() = default;
    explicit BasicTensor(Shape shape, T fill = T{}) : shape_(std::move(shape)), data_(shape_.numel(), fill) {}
    BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != shape_.numel())
            throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " +
                             shape_.str());
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t dim(std::size_t i) const { return shape_[i]; }
    std::size_t rank() const noexcept { return shape_.rank(); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<T> data() noexcept { return data_; }
    std::span<const T> data() const noexcept { return data_; }
    T* ptr() noexcept { return data_.data(); }
    const T* ptr() const noexcept { return data_.data(); }
    const std::vector<T>& vec() const noexcept { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    T& at(std::size_t a, std::size_t b) { return data_[a * shape_[1] + b]; }
    const T& at(std::size_t a, std::size_t b) const { return data_[a * shape_[1] + b]; }
    T& at(std::size_t a, std::size_t b, std::size_t c, std::size_t d) {
        return data_[((a * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
    }
    const T& at(std::size_t a, std::size_t b, std::size_t c, std::size_t d) const {
        return data_[((a * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
    }

    /// Same data, new shape of equal element count.
    BasicTensor reshaped(Shape s) const {
        if (s.numel() != data_.size())
            throw ShapeError("cannot reshape " + shape_.str() + " to " + s.str());
        return BasicTensor(std::move(s), data_);
    }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(static_cast<double>(v)); });
    }

    template <typename U>
    BasicTensor<U> cast() const {
        if (data_.empty()) return {};
        std::vector<U> out(data_.size());
        std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
        return BasicTensor<U>(shape_, std::move(out));
    }

    friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

private:
    Shape shape_;
    std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
    if (a != b) throw ShapeError(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
}

}  // namespace lns
