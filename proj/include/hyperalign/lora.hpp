// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "hyperalign/autodiff.hpp"
#include "hyperalign/tensor.hpp"

namespace hyperalign {

/// Rank-r factor pair for one adapted linear layer. Both factors carry a
/// leading batch axis so each trajectory in a batch owns its own delta:
/// A is (batch, r, in), B is (batch, out, r); the effective weight change
/// for row i is scale * B[i] * A[i].
struct LoraFactors {
    std::size_t layer = 0;
    Tensor A;
    Tensor B;
    double scale = 1.0;
};

struct LoraDelta {
    std::vector<LoraFactors> factors;

    std::size_t batch() const;
    std::size_t rank() const;
    /// True when every B entry is zero, i.e. the delta is the exact zero map.
    bool is_zero() const;
    /// Single-row delta (batch 1).
    LoraDelta select(std::size_t row) const;
    /// Row `row` repeated `n` times.
    LoraDelta broadcast_row(std::size_t row, std::size_t n) const;
    /// Concatenation of all A then B entries of one row, layer by layer.
    std::vector<double> flatten(std::size_t row) const;
    /// Dense (out, in) matrix scale * B * A for one layer and row.
    Tensor effective(std::size_t layer_index, std::size_t row) const;
};

/// Graph-side view of a LoraDelta (factors as tape nodes).
struct LoraVars {
    struct Layer {
        std::size_t layer = 0;
        Var A;
        Var B;
        double scale = 1.0;
    };
    std::vector<Layer> layers;

    const Layer* find(std::size_t layer) const;
};

/// Places a delta on a tape as constants.
LoraVars as_constants(Tape& tape, const LoraDelta& delta);
/// Reads the values of a graph-side delta back.
LoraDelta values_of(const LoraVars& vars);

/// Selects rows of a delta in the given order.
LoraDelta gather(const LoraDelta& delta, std::span<const std::size_t> rows);

}  // namespace hyperalign
