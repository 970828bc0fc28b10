// SPDX-License-Identifier: Apache-2.0
#include "hyperalign/lora.hpp"

#include <algorithm>

namespace hyperalign {

namespace {

Tensor take_rows(const Tensor& t, std::span<const std::size_t> rows) {
    const std::size_t stride = t.size() / t.dim(0);
    Shape s = t.shape();
    s[0] = rows.size();
    Tensor out(s);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= t.dim(0)) throw std::out_of_range("LoraDelta row out of range");
        std::copy_n(t.data() + rows[i] * stride, stride, out.data() + i * stride);
    }
    return out;
}

}  // namespace

std::size_t LoraDelta::batch() const { return factors.empty() ? 0 : factors.front().A.dim(0); }

std::size_t LoraDelta::rank() const { return factors.empty() ? 0 : factors.front().A.dim(1); }

bool LoraDelta::is_zero() const {
    for (const auto& f : factors)
        for (double v : f.B.values())
            if (v != 0.0) return false;
    return true;
}

LoraDelta LoraDelta::select(std::size_t row) const {
    const std::size_t r[1] = {row};
    return gather(*this, r);
}

LoraDelta LoraDelta::broadcast_row(std::size_t row, std::size_t n) const {
    std::vector<std::size_t> rows(n, row);
    return gather(*this, rows);
}

std::vector<double> LoraDelta::flatten(std::size_t row) const {
    std::vector<double> out;
    for (const auto& f : factors) {
        const std::size_t sa = f.A.size() / f.A.dim(0);
        const std::size_t sb = f.B.size() / f.B.dim(0);
        out.insert(out.end(), f.A.data() + row * sa, f.A.data() + (row + 1) * sa);
        out.insert(out.end(), f.B.data() + row * sb, f.B.data() + (row + 1) * sb);
    }
    return out;
}

Tensor LoraDelta::effective(std::size_t layer_index, std::size_t row) const {
    const LoraFactors& f = factors.at(layer_index);
    const std::size_t r = f.A.dim(1), in = f.A.dim(2), out = f.B.dim(1);
    Tensor m(Shape{out, in});
    const double* A = f.A.data() + row * r * in;
    const double* B = f.B.data() + row * out * r;
    for (std::size_t i = 0; i < out; ++i)
        for (std::size_t j = 0; j < in; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < r; ++k) acc += B[i * r + k] * A[k * in + j];
            m.at(i, j) = f.scale * acc;
        }
    return m;
}

const LoraVars::Layer* LoraVars::find(std::size_t layer) const {
    for (const auto& l : layers)
        if (l.layer == layer) return &l;
    return nullptr;
}

LoraVars as_constants(Tape& tape, const LoraDelta& delta) {
    LoraVars vars;
    for (const auto& f : delta.factors) {
        vars.layers.push_back({f.layer, tape.borrow(f.A), tape.borrow(f.B), f.scale});
    }
    return vars;
}

LoraDelta values_of(const LoraVars& vars) {
    LoraDelta d;
    for (const auto& l : vars.layers) d.factors.push_back({l.layer, l.A.value(), l.B.value(), l.scale});
    return d;
}

LoraDelta gather(const LoraDelta& delta, std::span<const std::size_t> rows) {
    LoraDelta d;
    for (const auto& f : delta.factors) d.factors.push_back({f.layer, take_rows(f.A, rows), take_rows(f.B, rows), f.scale});
    return d;
}

}  // namespace hyperalign
