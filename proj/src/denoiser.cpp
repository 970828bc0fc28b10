// SPDX-License-Identifier: Apache-2.0
#include "hyperalign/denoiser.hpp"

#include <cmath>

namespace hyperalign {

const char* to_string(Parameterization p) { return p == Parameterization::epsilon ? "epsilon" : "velocity"; }

Parameterization parameterization_from_string(const std::string& s) {
    if (s == "epsilon") return Parameterization::epsilon;
    if (s == "velocity") return Parameterization::velocity;
    throw std::invalid_argument("unknown parameterization '" + s + "'");
}

Tensor time_features(std::span<const double> times, std::size_t width) {
    if (width == 0 || width % 2 != 0) throw std::invalid_argument("time feature width must be even and positive");
    const std::size_t half = width / 2;
    Tensor out(Shape{times.size(), width});
    for (std::size_t i = 0; i < times.size(); ++i) {
        const double s = 1000.0 * times[i];
        for (std::size_t k = 0; k < half; ++k) {
            const double freq = std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(half));
            out.at(i, k) = std::sin(s * freq);
            out.at(i, half + k) = std::cos(s * freq);
        }
    }
    return out;
}

DenoiserNet::DenoiserNet(DenoiserConfig config, RngStream init) : config_(std::move(config)) {
    if (config_.data_dim == 0 || config_.num_conditions == 0 || config_.hidden.empty()) {
        throw std::invalid_argument("DenoiserNet: data_dim, num_conditions and hidden must be nonempty");
    }
    embedding_ = init.gaussian(Shape{config_.num_conditions, config_.cond_embedding});
    std::vector<std::size_t> widths = {input_width()};
    widths.insert(widths.end(), config_.hidden.begin(), config_.hidden.end());
    widths.push_back(config_.data_dim);
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const bool last = l + 2 == widths.size();
        const double std = (last ? 0.1 : std::sqrt(2.0)) / std::sqrt(static_cast<double>(widths[l]));
        Tensor w = init.gaussian(Shape{widths[l], widths[l + 1]});
        for (auto& v : w.values()) v *= std;
        weights_.push_back(std::move(w));
        biases_.emplace_back(Shape{widths[l + 1]});
    }
}

std::size_t DenoiserNet::input_width() const {
    return config_.data_dim + config_.time_features + config_.cond_embedding;
}

std::vector<Tensor*> DenoiserNet::parameters() {
    std::vector<Tensor*> p = {&embedding_};
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        p.push_back(&weights_[l]);
        p.push_back(&biases_[l]);
    }
    return p;
}

std::vector<const Tensor*> DenoiserNet::parameters() const {
    std::vector<const Tensor*> p = {&embedding_};
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        p.push_back(&weights_[l]);
        p.push_back(&biases_[l]);
    }
    return p;
}

std::vector<std::string> DenoiserNet::parameter_names() const {
    std::vector<std::string> n = {"embedding"};
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        n.push_back("layer" + std::to_string(l) + ".weight");
        n.push_back("layer" + std::to_string(l) + ".bias");
    }
    return n;
}

std::vector<Var> DenoiserNet::bind(Tape& tape, bool trainable) const {
    std::vector<Var> vars;
    for (const Tensor* p : parameters()) vars.push_back(tape.borrow(*p, trainable));
    return vars;
}

void DenoiserNet::check_delta(const LoraDelta& delta, std::size_t batch) const {
    for (const auto& f : delta.factors) {
        if (f.layer >= weights_.size()) {
            throw ShapeError("LoRA delta targets layer " + std::to_string(f.layer) + " but the denoiser has " +
                             std::to_string(weights_.size()) + " linear layers");
        }
        const std::size_t in = layer_in(f.layer), out = layer_out(f.layer);
        if (f.A.rank() != 3 || f.B.rank() != 3 || f.A.dim(0) != batch || f.B.dim(0) != batch ||
            f.A.dim(2) != in || f.B.dim(1) != out || f.A.dim(1) != f.B.dim(2)) {
            throw ShapeError("LoRA factors A " + shape_str(f.A.shape()) + ", B " + shape_str(f.B.shape()) +
                             " do not fit layer " + std::to_string(f.layer) + " (" + std::to_string(in) + " -> " +
                             std::to_string(out) + ") at batch " + std::to_string(batch));
        }
    }
}

Var DenoiserNet::forward(std::span<const Var> params, const Var& x, std::span<const double> times,
                         std::span<const std::size_t> cond, const LoraVars* delta) const {
    const std::size_t n = x.shape().at(0);
    if (x.value().rank() != 2 || x.shape()[1] != config_.data_dim) {
        throw ShapeError("denoiser input must be (batch, " + std::to_string(config_.data_dim) + "), got " +
                         shape_str(x.shape()));
    }
    if (times.size() != n || cond.size() != n) throw ShapeError("denoiser: times/cond length must equal batch");
    if (params.size() != 1 + 2 * weights_.size()) throw std::invalid_argument("denoiser: wrong parameter count");
    for (auto c : cond) {
        if (c >= config_.num_conditions) {
            throw std::out_of_range("condition id " + std::to_string(c) + " outside embedding table of " +
                                    std::to_string(config_.num_conditions));
        }
    }
    Tape& tape = *x.tape();
    const Var temb = tape.constant(time_features(times, config_.time_features));
    const Var cemb = ad::gather_rows(params[0], cond);
    const Var parts[] = {x, temb, cemb};
    Var h = ad::concat_last(parts);
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        Var z = ad::matmul(h, params[1 + 2 * l]) + params[2 + 2 * l];
        if (delta) {
            if (const auto* d = delta->find(l)) {
                // Per-row low-rank response scale * B (A h); added after the
                // base affine map so a zero B leaves z unchanged.
                const Var col = ad::reshape(h, Shape{n, layer_in(l), 1});
                const Var low = ad::bmm(d->B, ad::bmm(d->A, col));
                z = z + ad::scale(ad::reshape(low, Shape{n, layer_out(l)}), d->scale);
            }
        }
        h = l + 1 < weights_.size() ? ad::gelu(z) : z;
    }
    return h;
}

Tensor DenoiserNet::evaluate(const Tensor& x, std::span<const double> times, std::span<const std::size_t> cond,
                             const LoraDelta* delta) const {
    Tape tape;
    const auto params = bind(tape, false);
    LoraVars dv;
    if (delta) {
        check_delta(*delta, x.dim(0));
        dv = as_constants(tape, *delta);
    }
    return forward(params, tape.borrow(x), times, cond, delta ? &dv : nullptr).value();
}

InjectedDenoiser::InjectedDenoiser(const DenoiserNet& net, const LoraDelta& delta) : net_(&net), delta_(&delta) {
    if (delta.factors.empty()) return;
    net.check_delta(delta, delta.batch());
}

Tensor InjectedDenoiser::evaluate(const Tensor& x, std::span<const double> times,
                                  std::span<const std::size_t> cond) const {
    return net_->evaluate(x, times, cond, delta_);
}

InjectedDenoiser inject(const DenoiserNet& net, const LoraDelta& delta) { return InjectedDenoiser(net, delta); }

}  // namespace hyperalign
