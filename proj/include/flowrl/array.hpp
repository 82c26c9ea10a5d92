/// @file array.hpp
/// @brief Flat double-precision array with an explicit shape.

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace flowrl {

class NumericArray {
public:
    NumericArray() = default;
    explicit NumericArray(std::vector<std::size_t> shape, double fill = 0.0);
    NumericArray(std::vector<std::size_t> shape, std::vector<double> values);

    /// 1-D array owning @p values.
    static NumericArray from_vector(std::vector<double> values);
    static NumericArray from_list(std::initializer_list<double> values);

    const std::vector<std::size_t>& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t size() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }

    std::span<double> values() noexcept { return values_; }
    std::span<const double> values() const noexcept { return values_; }
    double* data() noexcept { return values_.data(); }
    const double* data() const noexcept { return values_.data(); }

    double& operator[](std::size_t i) noexcept { return values_[i]; }
    double operator[](std::size_t i) const noexcept { return values_[i]; }

    bool all_finite() const noexcept;
    std::string shape_string() const;

    friend bool operator==(const NumericArray&, const NumericArray&) = default;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> values_;
};

std::size_t shape_product(const std::vector<std::size_t>& shape) noexcept;

/// Throws ShapeError naming @p what when the sizes differ.
void require_same_size(std::size_t a, std::size_t b, const char* what);

bool all_finite(std::span<const double> values) noexcept;

}  // namespace flowrl
