// SPDX-License-Identifier: Apache-2.0
//
// Define-by-run reverse-mode differentiation over dense tensors. A Tape
// records each primitive application in creation order, which is a valid
// topological order; backward walks it once in reverse.
#pragma once

#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "hyperalign/tensor.hpp"

namespace hyperalign {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const;
    Tape* tape() const { return tape_; }
    std::size_t id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
public:
    using Backward = std::function<void(Tape&, const Tensor& grad_out)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Leaf that receives a gradient.
    Var param(Tensor value);
    /// Leaf that never receives a gradient.
    Var constant(Tensor value);
    /// Leaf referencing external storage; `value` must outlive the tape.
    Var borrow(const Tensor& value, bool requires_grad = false);

    /// Gradients of the scalar `output` with respect to each leaf in `leaves`.
    /// Leaves the output does not depend on get a zero tensor.
    std::vector<Tensor> gradient(const Var& output, std::span<const Var> leaves);

    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    // Primitive plumbing, used by the op implementations.
    Var record(Tensor value, std::vector<std::size_t> parents, Backward backward);
    void accumulate(std::size_t id, const Tensor& grad);
    void accumulate(std::size_t id, Tensor&& grad);
    const Tensor& value_of(std::size_t id) const;
    bool requires_grad_of(std::size_t id) const { return nodes_[id].requires_grad; }

private:
    struct Node {
        Tensor owned;
        const Tensor* borrowed = nullptr;
        bool requires_grad = false;
        std::vector<std::size_t> parents;
        Backward backward;
    };

    std::deque<Node> nodes_;  // stable element addresses across appends
    std::vector<Tensor> grads_;
    std::vector<bool> has_grad_;
};

/// Tensor operations that record on the tape of their operands. Binary
/// elementwise ops broadcast numpy-style.
namespace ad {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);

Var sum(const Var& a);
Var mean(const Var& a);
/// Sum over the trailing axis; (..., n) -> (...).
Var sum_last(const Var& a);

/// (..., k) x (k, n) -> (..., n).
Var matmul(const Var& a, const Var& b);
/// (B, m, k) x (B, k, n) -> (B, m, n).
Var bmm(const Var& a, const Var& b);
/// Swap the two trailing axes.
Var transpose_last(const Var& a);
Var reshape(const Var& a, Shape shape);
/// Repeat along a new leading axis of extent `n`.
Var expand_leading(const Var& a, std::size_t n);

Var tanh(const Var& a);
Var gelu(const Var& a);
Var exp(const Var& a);
Var sqrt(const Var& a);
Var square(const Var& a);
Var softmax_last(const Var& a);

Var concat_last(std::span<const Var> parts);
Var slice_last(const Var& a, std::size_t begin, std::size_t end);
/// Row lookup in a (V, E) table: result (n, E).
Var gather_rows(const Var& table, std::span<const std::size_t> index);

/// Same value, no gradient path.
Var detach(const Var& a);

}  // namespace ad

// Operator sugar for readability in model code.
inline Var operator+(const Var& a, const Var& b) { return ad::add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return ad::sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return ad::mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return ad::div(a, b); }
inline Var operator-(const Var& a) { return ad::neg(a); }
inline Var operator*(double s, const Var& a) { return ad::scale(a, s); }
inline Var operator*(const Var& a, double s) { return ad::scale(a, s); }

}  // namespace hyperalign
