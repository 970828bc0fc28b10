// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <string>
#include <vector>

#include "hyperalign/autodiff.hpp"
#include "hyperalign/lora.hpp"
#include "hyperalign/rng.hpp"
#include "hyperalign/tensor.hpp"

namespace hyperalign {

enum class Parameterization { epsilon, velocity };

const char* to_string(Parameterization p);
Parameterization parameterization_from_string(const std::string& s);

struct DenoiserConfig {
    std::size_t data_dim = 2;
    std::size_t num_conditions = 4;
    std::size_t time_features = 16;
    std::size_t cond_embedding = 8;
    std::vector<std::size_t> hidden = {128, 128, 128};
    Parameterization parameterization = Parameterization::epsilon;

    bool operator==(const DenoiserConfig&) const = default;
};

/// Sinusoidal features of normalized times in [0, 1]; result (n, width).
Tensor time_features(std::span<const double> times, std::size_t width);

/// Conditional MLP predicting noise (VP) or velocity (flow):
///   h0 = [x, time features, condition embedding]
///   h_{l+1} = gelu(h_l W_l + b_l),  out = h_L W_L + b_L.
/// Linear layer l may be adapted by a LoRA delta; weights are stored (in, out).
class DenoiserNet {
public:
    DenoiserNet() = default;
    DenoiserNet(DenoiserConfig config, RngStream init);

    const DenoiserConfig& config() const { return config_; }
    std::size_t num_layers() const { return weights_.size(); }
    std::size_t layer_in(std::size_t layer) const { return weights_.at(layer).dim(0); }
    std::size_t layer_out(std::size_t layer) const { return weights_.at(layer).dim(1); }
    std::size_t input_width() const;

    /// Parameter tensors in a fixed order: embedding, then (W, b) per layer.
    std::vector<Tensor*> parameters();
    std::vector<const Tensor*> parameters() const;
    std::vector<std::string> parameter_names() const;
    const Tensor& embedding() const { return embedding_; }
    Tensor& weight(std::size_t layer) { return weights_.at(layer); }
    const Tensor& weight(std::size_t layer) const { return weights_.at(layer); }

    /// Places the parameters on a tape without copying; `trainable` marks
    /// them as gradient leaves. The net must outlive the tape.
    std::vector<Var> bind(Tape& tape, bool trainable) const;

    /// Graph forward pass. `params` comes from bind(); `delta` may be null.
    Var forward(std::span<const Var> params, const Var& x, std::span<const double> times,
                std::span<const std::size_t> cond, const LoraVars* delta = nullptr) const;

    /// Value-only forward pass.
    Tensor evaluate(const Tensor& x, std::span<const double> times, std::span<const std::size_t> cond,
                    const LoraDelta* delta = nullptr) const;

    /// Throws if `delta` does not fit this net's adaptation points.
    void check_delta(const LoraDelta& delta, std::size_t batch) const;

    bool operator==(const DenoiserNet&) const = default;

private:
    DenoiserConfig config_;
    Tensor embedding_;
    std::vector<Tensor> weights_;
    std::vector<Tensor> biases_;
};

/// Forward evaluator with a LoRA delta injected: every adapted weight W acts
/// as W + scale * B * A. The underlying net is never mutated.
class InjectedDenoiser {
public:
    InjectedDenoiser(const DenoiserNet& net, const LoraDelta& delta);

    Tensor evaluate(const Tensor& x, std::span<const double> times, std::span<const std::size_t> cond) const;

private:
    const DenoiserNet* net_;
    const LoraDelta* delta_;
};

InjectedDenoiser inject(const DenoiserNet& net, const LoraDelta& delta);

}  // namespace hyperalign
