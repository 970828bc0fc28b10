// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace hyperalign {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Thrown when operand shapes are incompatible for a primitive.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Dense row-major tensor of 64-bit floats.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
    static Tensor from_rows(const std::vector<std::vector<double>>& rows);

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

    std::span<const double> values() const { return data_; }
    std::span<double> values() { return data_; }
    const double* data() const { return data_.data(); }
    double* data() { return data_.data(); }

    double operator[](std::size_t i) const { return data_[i]; }
    double& operator[](std::size_t i) { return data_[i]; }

    // 2-D access, row-major.
    double at(std::size_t i, std::size_t j) const { return data_[i * shape_.back() + j]; }
    double& at(std::size_t i, std::size_t j) { return data_[i * shape_.back() + j]; }

    /// Value of a tensor holding exactly one element.
    double item() const;

    Tensor reshaped(Shape shape) const;
    /// Copy of rows [begin, end) along the leading axis.
    Tensor rows(std::size_t begin, std::size_t end) const;
    Tensor row(std::size_t i) const { return rows(i, i + 1); }

    bool all_finite() const;
    bool operator==(const Tensor& other) const = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

/// Stack equally shaped tensors along a new leading axis.
Tensor stack(std::span<const Tensor> parts);
/// Concatenate along the leading axis.
Tensor concat_rows(std::span<const Tensor> parts);

/// Bitwise comparison, distinguishes -0.0 and NaN payloads.
bool bitwise_equal(const Tensor& a, const Tensor& b);

}  // namespace hyperalign
