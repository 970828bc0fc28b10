// SPDX-License-Identifier: Apache-2.0
#include "hyperalign/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

namespace hyperalign {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

Tape& tape_of(const Var& a) {
    if (!a.valid()) throw std::invalid_argument("operation on an unbound Var");
    return *a.tape();
}

Tape& tape_of(const Var& a, const Var& b) {
    Tape& t = tape_of(a);
    if (b.tape() != &t) throw std::invalid_argument("operands recorded on different tapes");
    return t;
}

// --- broadcasting ----------------------------------------------------------

struct Broadcast {
    Shape out;
    std::vector<std::size_t> stride_a;  // per output axis, 0 on broadcast axes
    std::vector<std::size_t> stride_b;
};

std::vector<std::size_t> contiguous_strides(const Shape& s) {
    std::vector<std::size_t> st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

Broadcast broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
    const std::size_t r = std::max(a.size(), b.size());
    Broadcast bc;
    bc.out.assign(r, 1);
    bc.stride_a.assign(r, 0);
    bc.stride_b.assign(r, 0);
    const auto sa = contiguous_strides(a);
    const auto sb = contiguous_strides(b);
    for (std::size_t i = 0; i < r; ++i) {
        const std::ptrdiff_t ia = static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(r - a.size());
        const std::ptrdiff_t ib = static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(r - b.size());
        const std::size_t ea = ia >= 0 ? a[static_cast<std::size_t>(ia)] : 1;
        const std::size_t eb = ib >= 0 ? b[static_cast<std::size_t>(ib)] : 1;
        if (ea != eb && ea != 1 && eb != 1) {
            throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        }
        bc.out[i] = std::max(ea, eb);
        if (ia >= 0 && ea != 1) bc.stride_a[i] = sa[static_cast<std::size_t>(ia)];
        if (ib >= 0 && eb != 1) bc.stride_b[i] = sb[static_cast<std::size_t>(ib)];
    }
    return bc;
}

// Calls fn(out_index, a_offset, b_offset) for every output element.
template <typename Fn>
void for_each_broadcast(const Broadcast& bc, Fn&& fn) {
    const std::size_t r = bc.out.size();
    const std::size_t n = shape_numel(bc.out);
    if (n == 0) return;
    std::vector<std::size_t> idx(r, 0);
    std::size_t oa = 0, ob = 0;
    for (std::size_t k = 0; k < n; ++k) {
        fn(k, oa, ob);
        for (std::size_t ax = r; ax-- > 0;) {
            ++idx[ax];
            oa += bc.stride_a[ax];
            ob += bc.stride_b[ax];
            if (idx[ax] < bc.out[ax]) break;
            oa -= bc.stride_a[ax] * idx[ax];
            ob -= bc.stride_b[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
}

enum class BinOp { Add, Sub, Mul, Div };

double apply(BinOp op, double x, double y) {
    switch (op) {
        case BinOp::Add: return x + y;
        case BinOp::Sub: return x - y;
        case BinOp::Mul: return x * y;
        case BinOp::Div: return x / y;
    }
    return 0.0;
}

const char* op_name(BinOp op) {
    switch (op) {
        case BinOp::Add: return "add";
        case BinOp::Sub: return "sub";
        case BinOp::Mul: return "mul";
        case BinOp::Div: return "div";
    }
    return "?";
}

Var binary(const Var& a, const Var& b, BinOp op) {
    Tape& tape = tape_of(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    Tensor out;
    std::shared_ptr<Broadcast> bc;
    if (av.shape() == bv.shape()) {
        out = Tensor(av.shape());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = apply(op, av[i], bv[i]);
    } else {
        bc = std::make_shared<Broadcast>(broadcast_shapes(av.shape(), bv.shape(), op_name(op)));
        out = Tensor(bc->out);
        for_each_broadcast(*bc, [&](std::size_t k, std::size_t ia, std::size_t ib) {
            out[k] = apply(op, av[ia], bv[ib]);
        });
    }
    const std::size_t ia = a.id(), ib = b.id();
    return tape.record(std::move(out), {ia, ib}, [ia, ib, op, bc](Tape& t, const Tensor& g) {
        const Tensor& x = t.value_of(ia);
        const Tensor& y = t.value_of(ib);
        const bool need_a = t.requires_grad_of(ia);
        const bool need_b = t.requires_grad_of(ib);
        Tensor ga, gb;
        if (need_a) ga = Tensor(x.shape());
        if (need_b) gb = Tensor(y.shape());
        auto body = [&](std::size_t k, std::size_t oa, std::size_t ob) {
            const double gk = g[k];
            switch (op) {
                case BinOp::Add:
                    if (need_a) ga[oa] += gk;
                    if (need_b) gb[ob] += gk;
                    break;
                case BinOp::Sub:
                    if (need_a) ga[oa] += gk;
                    if (need_b) gb[ob] -= gk;
                    break;
                case BinOp::Mul:
                    if (need_a) ga[oa] += gk * y[ob];
                    if (need_b) gb[ob] += gk * x[oa];
                    break;
                case BinOp::Div:
                    if (need_a) ga[oa] += gk / y[ob];
                    if (need_b) gb[ob] -= gk * x[oa] / (y[ob] * y[ob]);
                    break;
            }
        };
        if (bc) {
            for_each_broadcast(*bc, body);
        } else {
            for (std::size_t k = 0; k < g.size(); ++k) body(k, k, k);
        }
        if (need_a) t.accumulate(ia, std::move(ga));
        if (need_b) t.accumulate(ib, std::move(gb));
    });
}

template <typename F, typename D>
Var unary(const Var& a, F f, D dfdx_from_x_and_y) {
    Tape& tape = tape_of(a);
    const Tensor& av = a.value();
    Tensor out(av.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i]);
    const std::size_t ia = a.id();
    const std::size_t io = tape.size();  // id the output will receive
    return tape.record(std::move(out), {ia}, [ia, io, dfdx_from_x_and_y](Tape& t, const Tensor& g) {
        const Tensor& x = t.value_of(ia);
        const Tensor& y = t.value_of(io);
        Tensor gx(x.shape());
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = g[i] * dfdx_from_x_and_y(x[i], y[i]);
        t.accumulate(ia, std::move(gx));
    });
}

}  // namespace

// --- Var / Tape --------------------------------------------------------------

const Tensor& Var::value() const { return tape_of(*this).value_of(id_); }
bool Var::requires_grad() const { return tape_of(*this).requires_grad_of(id_); }

Var Tape::param(Tensor value) {
    nodes_.push_back(Node{std::move(value), nullptr, true, {}, {}});
    return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), nullptr, false, {}, {}});
    return Var(this, nodes_.size() - 1);
}

Var Tape::borrow(const Tensor& value, bool requires_grad) {
    nodes_.push_back(Node{Tensor{}, &value, requires_grad, {}, {}});
    return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value_of(std::size_t id) const {
    const Node& n = nodes_[id];
    return n.borrowed ? *n.borrowed : n.owned;
}

Var Tape::record(Tensor value, std::vector<std::size_t> parents, Backward backward) {
    bool needs = false;
    for (auto p : parents) needs = needs || nodes_[p].requires_grad;
    Node n;
    n.owned = std::move(value);
    n.requires_grad = needs;
    if (needs) {
        n.parents = std::move(parents);
        n.backward = std::move(backward);
    }
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(std::size_t id, const Tensor& grad) {
    if (!nodes_[id].requires_grad) return;
    if (!has_grad_[id]) {
        grads_[id] = grad;
        has_grad_[id] = true;
        return;
    }
    Tensor& acc = grads_[id];
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += grad[i];
}

void Tape::accumulate(std::size_t id, Tensor&& grad) {
    if (!nodes_[id].requires_grad) return;
    if (!has_grad_[id]) {
        grads_[id] = std::move(grad);
        has_grad_[id] = true;
        return;
    }
    Tensor& acc = grads_[id];
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += grad[i];
}

std::vector<Tensor> Tape::gradient(const Var& output, std::span<const Var> leaves) {
    if (output.tape() != this) throw std::invalid_argument("gradient: output is not on this tape");
    if (output.value().size() != 1) {
        throw ShapeError("gradient: output must be scalar, got shape " + shape_str(output.shape()));
    }
    for (const auto& l : leaves) {
        if (l.tape() != this || l.id() >= nodes_.size()) {
            throw std::invalid_argument("gradient: requested leaf is not on this tape");
        }
    }
    grads_.assign(nodes_.size(), Tensor{});
    has_grad_.assign(nodes_.size(), false);
    const std::size_t out = output.id();
    if (nodes_[out].requires_grad) {
        grads_[out] = Tensor(output.shape(), 1.0);
        has_grad_[out] = true;
    }
    for (std::size_t id = out + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (!has_grad_[id] || !n.backward) continue;
        n.backward(*this, grads_[id]);
    }
    std::vector<Tensor> result;
    result.reserve(leaves.size());
    for (const auto& l : leaves) {
        result.push_back(has_grad_[l.id()] ? grads_[l.id()] : Tensor(l.shape()));
    }
    grads_.clear();
    has_grad_.clear();
    return result;
}

// --- primitives ----------------------------------------------------------------

namespace ad {

Var add(const Var& a, const Var& b) { return binary(a, b, BinOp::Add); }
Var sub(const Var& a, const Var& b) { return binary(a, b, BinOp::Sub); }
Var mul(const Var& a, const Var& b) { return binary(a, b, BinOp::Mul); }
Var div(const Var& a, const Var& b) { return binary(a, b, BinOp::Div); }

Var neg(const Var& a) {
    return unary(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Var scale(const Var& a, double s) {
    return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(const Var& a, double s) {
    return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var sum(const Var& a) {
    Tape& tape = tape_of(a);
    double s = 0.0;
    for (double v : a.value().values()) s += v;
    const std::size_t ia = a.id();
    return tape.record(Tensor::scalar(s), {ia}, [ia](Tape& t, const Tensor& g) {
        t.accumulate(ia, Tensor(t.value_of(ia).shape(), g[0]));
    });
}

Var mean(const Var& a) {
    const std::size_t n = a.value().size();
    if (n == 0) throw ShapeError("mean of empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var sum_last(const Var& a) {
    Tape& tape = tape_of(a);
    const Tensor& av = a.value();
    if (av.rank() == 0) throw ShapeError("sum_last on scalar");
    const std::size_t n = av.shape().back();
    Shape s(av.shape().begin(), av.shape().end() - 1);
    Tensor out(s);
    for (std::size_t i = 0; i < out.size(); ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += av[i * n + j];
        out[i] = acc;
    }
    const std::size_t ia = a.id();
    return tape.record(std::move(out), {ia}, [ia, n](Tape& t, const Tensor& g) {
        Tensor gx(t.value_of(ia).shape());
        for (std::size_t i = 0; i < g.size(); ++i)
            for (std::size_t j = 0; j < n; ++j) gx[i * n + j] = g[i];
        t.accumulate(ia, std::move(gx));
    });
}

Var matmul(const Var& a, const Var& b) {
    Tape& tape = tape_of(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() < 2 || bv.rank() != 2 || av.shape().back() != bv.dim(0)) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
    }
    const std::size_t k = bv.dim(0), n = bv.dim(1);
    const std::size_t m = av.size() / k;
    Shape s = av.shape();
    s.back() = n;
    Tensor out(s);
    MapMat(out.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n)).noalias() =
        CMapMat(av.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k)) *
        CMapMat(bv.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
    const std::size_t ia = a.id(), ib = b.id();
    return tape.record(std::move(out), {ia, ib}, [ia, ib, m, k, n](Tape& t, const Tensor& g) {
        const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k),
                   N = static_cast<Eigen::Index>(n);
        CMapMat G(g.data(), M, N);
        if (t.requires_grad_of(ia)) {
            Tensor ga(t.value_of(ia).shape());
            MapMat(ga.data(), M, K).noalias() = G * CMapMat(t.value_of(ib).data(), K, N).transpose();
            t.accumulate(ia, std::move(ga));
        }
        if (t.requires_grad_of(ib)) {
            Tensor gb(t.value_of(ib).shape());
            MapMat(gb.data(), K, N).noalias() = CMapMat(t.value_of(ia).data(), M, K).transpose() * G;
            t.accumulate(ib, std::move(gb));
        }
    });
}

Var bmm(const Var& a, const Var& b) {
    Tape& tape = tape_of(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(1)) {
        throw ShapeError("bmm: incompatible shapes " + shape_str(av.shape()) + " x " + shape_str(bv.shape()));
    }
    const std::size_t B = av.dim(0), m = av.dim(1), k = av.dim(2), n = bv.dim(2);
    Tensor out(Shape{B, m, n});
    const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k), N = static_cast<Eigen::Index>(n);
    for (std::size_t i = 0; i < B; ++i) {
        MapMat(out.data() + i * m * n, M, N).noalias() =
            CMapMat(av.data() + i * m * k, M, K) * CMapMat(bv.data() + i * k * n, K, N);
    }
    const std::size_t ia = a.id(), ib = b.id();
    return tape.record(std::move(out), {ia, ib}, [ia, ib, B, m, k, n](Tape& t, const Tensor& g) {
        const auto M = static_cast<Eigen::Index>(m), K = static_cast<Eigen::Index>(k),
                   N = static_cast<Eigen::Index>(n);
        const Tensor& x = t.value_of(ia);
        const Tensor& y = t.value_of(ib);
        const bool need_a = t.requires_grad_of(ia), need_b = t.requires_grad_of(ib);
        Tensor ga, gb;
        if (need_a) ga = Tensor(x.shape());
        if (need_b) gb = Tensor(y.shape());
        for (std::size_t i = 0; i < B; ++i) {
            CMapMat G(g.data() + i * m * n, M, N);
            if (need_a)
                MapMat(ga.data() + i * m * k, M, K).noalias() = G * CMapMat(y.data() + i * k * n, K, N).transpose();
            if (need_b)
                MapMat(gb.data() + i * k * n, K, N).noalias() = CMapMat(x.data() + i * m * k, M, K).transpose() * G;
        }
        if (need_a) t.accumulate(ia, std::move(ga));
        if (need_b) t.accumulate(ib, std::move(gb));
    });
}

namespace {
Tensor transpose_last_value(const Tensor& x) {
    const std::size_t r = x.rank();
    const std::size_t p = x.dim(r - 2), q = x.dim(r - 1);
    const std::size_t batch = x.size() / (p * q);
    Shape s = x.shape();
    std::swap(s[r - 2], s[r - 1]);
    Tensor out(s);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < p; ++i)
            for (std::size_t j = 0; j < q; ++j) out[b * p * q + j * p + i] = x[b * p * q + i * q + j];
    return out;
}
}  // namespace

Var transpose_last(const Var& a) {
    Tape& tape = tape_of(a);
    if (a.value().rank() < 2) throw ShapeError("transpose_last needs rank >= 2, got " + shape_str(a.shape()));
    const std::size_t ia = a.id();
    return tape.record(transpose_last_value(a.value()), {ia},
                       [ia](Tape& t, const Tensor& g) { t.accumulate(ia, transpose_last_value(g)); });
}

Var reshape(const Var& a, Shape shape) {
    Tape& tape = tape_of(a);
    Tensor out = a.value().reshaped(std::move(shape));
    const std::size_t ia = a.id();
    return tape.record(std::move(out), {ia}, [ia](Tape& t, const Tensor& g) {
        t.accumulate(ia, g.reshaped(t.value_of(ia).shape()));
    });
}

Var expand_leading(const Var& a, std::size_t n) {
    Tape& tape = tape_of(a);
    const Tensor& av = a.value();
    Shape s = av.shape();
    s.insert(s.begin(), n);
    std::vector<double> values;
    values.reserve(n * av.size());
    for (std::size_t i = 0; i < n; ++i) values.insert(values.end(), av.values().begin(), av.values().end());
    const std::size_t ia = a.id();
    return tape.record(Tensor(std::move(s), std::move(values)), {ia}, [ia, n](Tape& t, const Tensor& g) {
        Tensor gx(t.value_of(ia).shape());
        const std::size_t m = gx.size();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j) gx[j] += g[i * m + j];
        t.accumulate(ia, std::move(gx));
    });
}

Var tanh(const Var& a) {
    return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var gelu(const Var& a) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    return unary(
        a, [=](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
        [=](double x, double) {
            return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
        });
}

Var exp(const Var& a) {
    return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var sqrt(const Var& a) {
    return unary(a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Var square(const Var& a) {
    return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var softmax_last(const Var& a) {
    Tape& tape = tape_of(a);
    const Tensor& av = a.value();
    if (av.rank() == 0) throw ShapeError("softmax_last on scalar");
    const std::size_t n = av.shape().back();
    Tensor out(av.shape());
    for (std::size_t r = 0; r < av.size() / n; ++r) {
        const double* x = av.data() + r * n;
        double* y = out.data() + r * n;
        const double mx = *std::max_element(x, x + n);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) z += (y[j] = std::exp(x[j] - mx));
        for (std::size_t j = 0; j < n; ++j) y[j] /= z;
    }
    const std::size_t ia = a.id();
    const std::size_t io = tape.size();
    return tape.record(std::move(out), {ia}, [ia, io, n](Tape& t, const Tensor& g) {
        const Tensor& y = t.value_of(io);
        Tensor gx(y.shape());
        for (std::size_t r = 0; r < y.size() / n; ++r) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * y[r * n + j];
            for (std::size_t j = 0; j < n; ++j) gx[r * n + j] = y[r * n + j] * (g[r * n + j] - dot);
        }
        t.accumulate(ia, std::move(gx));
    });
}

Var concat_last(std::span<const Var> parts) {
    if (parts.empty()) throw ShapeError("concat_last of zero tensors");
    Tape& tape = tape_of(parts.front());
    const Shape& s0 = parts.front().shape();
    if (s0.empty()) throw ShapeError("concat_last on scalars");
    const std::size_t rows = parts.front().value().size() / s0.back();
    std::vector<std::size_t> widths, ids;
    std::size_t total = 0;
    for (const auto& p : parts) {
        if (p.tape() != &tape) throw std::invalid_argument("concat_last: operands on different tapes");
        const Shape& s = p.shape();
        if (s.size() != s0.size() || !std::equal(s.begin(), s.end() - 1, s0.begin())) {
            throw ShapeError("concat_last: shape mismatch " + shape_str(s0) + " vs " + shape_str(s));
        }
        widths.push_back(s.back());
        ids.push_back(p.id());
        total += s.back();
    }
    Shape so = s0;
    so.back() = total;
    Tensor out(so);
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Tensor& v = parts[k].value();
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(v.data() + r * widths[k], widths[k], out.data() + r * total + off);
        off += widths[k];
    }
    return tape.record(std::move(out), ids, [ids, widths, rows, total](Tape& t, const Tensor& g) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (t.requires_grad_of(ids[k])) {
                Tensor gk(t.value_of(ids[k]).shape());
                for (std::size_t r = 0; r < rows; ++r)
                    std::copy_n(g.data() + r * total + off, widths[k], gk.data() + r * widths[k]);
                t.accumulate(ids[k], std::move(gk));
            }
            off += widths[k];
        }
    });
}

Var slice_last(const Var& a, std::size_t begin, std::size_t end) {
    Tape& tape = tape_of(a);
    const Tensor& av = a.value();
    if (av.rank() == 0 || begin > end || end > av.shape().back()) {
        throw ShapeError("slice_last [" + std::to_string(begin) + "," + std::to_string(end) + ") on " +
                         shape_str(av.shape()));
    }
    const std::size_t n = av.shape().back(), w = end - begin, rows = av.size() / n;
    Shape s = av.shape();
    s.back() = w;
    Tensor out(s);
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(av.data() + r * n + begin, w, out.data() + r * w);
    const std::size_t ia = a.id();
    return tape.record(std::move(out), {ia}, [ia, begin, n, w, rows](Tape& t, const Tensor& g) {
        Tensor gx(t.value_of(ia).shape());
        for (std::size_t r = 0; r < rows; ++r) std::copy_n(g.data() + r * w, w, gx.data() + r * n + begin);
        t.accumulate(ia, std::move(gx));
    });
}

Var gather_rows(const Var& table, std::span<const std::size_t> index) {
    Tape& tape = tape_of(table);
    const Tensor& tv = table.value();
    if (tv.rank() != 2) throw ShapeError("gather_rows needs a (V, E) table, got " + shape_str(tv.shape()));
    const std::size_t V = tv.dim(0), E = tv.dim(1);
    Tensor out(Shape{index.size(), E});
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] >= V) {
            throw std::out_of_range("gather_rows: index " + std::to_string(index[i]) + " outside table of " +
                                    std::to_string(V) + " rows");
        }
        std::copy_n(tv.data() + index[i] * E, E, out.data() + i * E);
    }
    const std::size_t it = table.id();
    std::vector<std::size_t> idx(index.begin(), index.end());
    return tape.record(std::move(out), {it}, [it, idx = std::move(idx), E](Tape& t, const Tensor& g) {
        Tensor gt(t.value_of(it).shape());
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t j = 0; j < E; ++j) gt[idx[i] * E + j] += g[i * E + j];
        t.accumulate(it, std::move(gt));
    });
}

Var detach(const Var& a) { return tape_of(a).constant(a.value()); }

}  // namespace ad

}  // namespace hyperalign
