// SPDX-License-Identifier: Apache-2.0
//
// Hypernetwork emitting per-input, per-step LoRA deltas for the denoiser, the
// S/I/P scheduling strategies and curvature-based keystep selection.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hyperalign/denoiser.hpp"
#include "hyperalign/diffusion.hpp"
#include "hyperalign/lora.hpp"
#include "hyperalign/sampler.hpp"

namespace hyperalign {

struct HyperNetConfig {
    std::vector<std::size_t> target_layers = {0, 1, 2};
    std::size_t rank = 4;
    std::size_t query_tokens = 4;
    std::size_t kv_tokens = 4;
    std::size_t token_width = 16;
    std::vector<std::size_t> encoder_hidden = {64, 64};
    std::size_t ffn_hidden = 32;
    double lora_scale = 1.0;

    bool operator==(const HyperNetConfig&) const = default;
};

/// Parameter layout (in order):
///   cond_embedding (K, E)                 copied from the denoiser
///   encoder W_l, b_l                      MLP over [x, time features, embedding]
///   kv W, b                               last hidden -> kv_tokens * width
///   query (q, D)                          zero-initialized tokens
///   Wq, Wk, Wv, Wo (D, D)                 single cross-attention block
///   ffn W1 (D, F), b1, W2 (F, D), b2      residual feed-forward
///   per target layer: A head W, b; B head W, b   (B head all zeros)
class HyperNet {
public:
    HyperNet() = default;
    HyperNet(HyperNetConfig config, const DenoiserNet& net, RngStream init);

    const HyperNetConfig& config() const { return config_; }
    std::size_t parameter_count() const;
    std::vector<Tensor*> parameters();
    std::vector<const Tensor*> parameters() const;
    std::vector<std::string> parameter_names() const;
    /// (in, out) of each target layer in config order.
    const std::vector<std::pair<std::size_t, std::size_t>>& layer_shapes() const { return layer_shapes_; }
    std::size_t time_features() const { return time_features_; }

    /// Places psi on a tape without copying; the hypernet must outlive it.
    std::vector<Var> bind(Tape& tape, bool trainable) const;

    /// Graph forward: one delta row per input row.
    LoraVars forward(std::span<const Var> params, const Var& x, std::span<const double> times,
                     std::span<const std::size_t> cond) const;

    /// Value-only prediction.
    LoraDelta predict(const Tensor& x, std::span<const double> times, std::span<const std::size_t> cond) const;

    bool operator==(const HyperNet&) const = default;

private:
    HyperNetConfig config_;
    std::size_t time_features_ = 0;
    std::size_t num_conditions_ = 0;
    std::size_t data_dim_ = 0;
    std::vector<std::pair<std::size_t, std::size_t>> layer_shapes_;
    std::vector<Tensor> params_;
    std::vector<std::string> names_;
};

/// Builds a hypernet for `net`; rejects target layers the denoiser lacks.
HyperNet build_hypernet(const HyperNetConfig& config, const DenoiserNet& net, std::uint64_t seed);

/// Delta for states x_t at step k of `process`.
LoraDelta predict_lora(const HyperNet& hnet, const Process& process, const Tensor& x_t, int k,
                       std::span<const std::size_t> cond);

enum class Strategy { S, I, P };

const char* to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);

/// Keysteps in strictly descending order, the first equal to T. Step t is
/// served by the nearest keystep >= t.
struct KeystepSchedule {
    int T = 0;
    std::vector<int> steps;

    void validate() const;
    int keystep_for(int t) const;
    bool is_keystep(int t) const;
    std::size_t M() const { return steps.size(); }
};

struct StrategySpec {
    Strategy variant = Strategy::S;
    KeystepSchedule keysteps;  // used by P only

    void validate(int T) const;
};

struct DeltaLogEntry {
    int step = 0;
    LoraDelta delta;
};

struct AlignedTrajectory {
    Tensor samples;
    std::vector<DeltaLogEntry> log;  // one entry per regeneration
};

/// Injected sampler. S regenerates the delta at every step, I once at T,
/// P at each keystep from the pre-transition state.
AlignedTrajectory aligned_sample(const Process& process, const DenoiserNet& net, const HyperNet& hnet,
                                 std::span<const std::size_t> cond, std::span<RngStream> streams,
                                 const StrategySpec& strategy, bool log_deltas = false,
                                 const StepObserver& observer = {});

/// Keystep selection from an averaged relative-change profile.
/// `profile[t - 1]` holds d_t for t = 1..T-1.
struct KeystepSelection {
    KeystepSchedule schedule;
    std::vector<double> profile;    // d_t, t = 1..T-1
    std::vector<double> curvature;  // kappa_t, t = 1..T-1
};

/// kappa_t = |d_{t-1} - 2 d_t + d_{t+1}| with d_0 := d_1 and d_T := d_{T-1};
/// keysteps = {T} plus the M - 1 largest kappa (ties to larger t).
KeystepSelection keysteps_from_profile(std::vector<double> profile, int T, std::size_t M);

/// Relative l1 change of one-step predictions along base trajectories,
/// averaged over probes: profile[t - 1] = d_t.
std::vector<double> change_profile(const Process& process, const DenoiserNet& net,
                                   std::span<const std::size_t> probe_cond, std::uint64_t seed);

KeystepSelection select_keysteps(const Process& process, const DenoiserNet& net,
                                 std::span<const std::size_t> probe_cond, std::size_t M, std::uint64_t seed);

}  // namespace hyperalign
