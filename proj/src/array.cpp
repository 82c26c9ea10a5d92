#include "flowrl/array.hpp"

#include <cmath>
#include <functional>
#include <numeric>

#include "flowrl/errors.hpp"

namespace flowrl {

std::size_t shape_product(const std::vector<std::size_t>& shape) noexcept {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

NumericArray::NumericArray(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), values_(shape_product(shape_), fill) {}

NumericArray::NumericArray(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
    if (shape_product(shape_) != values_.size()) {
        throw ShapeError("shape " + shape_string() + " does not hold " +
                         std::to_string(values_.size()) + " values");
    }
}

NumericArray NumericArray::from_vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return NumericArray({n}, std::move(values));
}

NumericArray NumericArray::from_list(std::initializer_list<double> values) {
    return from_vector(std::vector<double>(values));
}

std::size_t NumericArray::dim(std::size_t axis) const {
    if (axis >= shape_.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_string());
    }
    return shape_[axis];
}

bool NumericArray::all_finite() const noexcept { return flowrl::all_finite(values_); }

std::string NumericArray::shape_string() const {
    std::string s = "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape_[i]);
    }
    return s + "]";
}

void require_same_size(std::size_t a, std::size_t b, const char* what) {
    if (a != b) {
        throw ShapeError(std::string(what) + ": size mismatch (" + std::to_string(a) + " vs " +
                         std::to_string(b) + ")");
    }
}

bool all_finite(std::span<const double> values) noexcept {
    for (double v : values) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

}  // namespace flowrl
