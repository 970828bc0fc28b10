// SPDX-License-Identifier: Apache-2.0
#include "hyperalign/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace hyperalign {

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ')';
    return os.str();
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (data_.size() != shape_numel(shape_)) {
        throw ShapeError("tensor of shape " + shape_str(shape_) + " given " + std::to_string(data_.size()) +
                         " values");
    }
}

Tensor Tensor::from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) return Tensor(Shape{0, 0});
    const std::size_t cols = rows.front().size();
    std::vector<double> values;
    values.reserve(rows.size() * cols);
    for (const auto& r : rows) {
        if (r.size() != cols) throw ShapeError("ragged rows");
        values.insert(values.end(), r.begin(), r.end());
    }
    return Tensor(Shape{rows.size(), cols}, std::move(values));
}

double Tensor::item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
    return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size()) {
        throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    }
    return Tensor(std::move(shape), data_);
}

Tensor Tensor::rows(std::size_t begin, std::size_t end) const {
    if (shape_.empty() || end > shape_[0] || begin > end) {
        throw ShapeError("row range out of bounds for " + shape_str(shape_));
    }
    const std::size_t stride = shape_numel(shape_) / (shape_[0] ? shape_[0] : 1);
    Shape s = shape_;
    s[0] = end - begin;
    return Tensor(std::move(s), std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(begin * stride),
                                                    data_.begin() + static_cast<std::ptrdiff_t>(end * stride)));
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

Tensor stack(std::span<const Tensor> parts) {
    if (parts.empty()) throw ShapeError("stack of zero tensors");
    Shape s = parts.front().shape();
    std::vector<double> values;
    values.reserve(parts.size() * parts.front().size());
    for (const auto& p : parts) {
        if (p.shape() != s) throw ShapeError("stack shape mismatch " + shape_str(s) + " vs " + shape_str(p.shape()));
        values.insert(values.end(), p.values().begin(), p.values().end());
    }
    s.insert(s.begin(), parts.size());
    return Tensor(std::move(s), std::move(values));
}

Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) throw ShapeError("concat of zero tensors");
    Shape s = parts.front().shape();
    if (s.empty()) throw ShapeError("concat_rows on scalars");
    std::size_t rows = 0;
    std::vector<double> values;
    for (const auto& p : parts) {
        if (p.rank() != s.size() || !std::equal(s.begin() + 1, s.end(), p.shape().begin() + 1)) {
            throw ShapeError("concat_rows shape mismatch " + shape_str(s) + " vs " + shape_str(p.shape()));
        }
        rows += p.dim(0);
        values.insert(values.end(), p.values().begin(), p.values().end());
    }
    s[0] = rows;
    return Tensor(std::move(s), std::move(values));
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    return a.shape() == b.shape() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace hyperalign
