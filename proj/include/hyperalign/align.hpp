// SPDX-License-Identifier: Apache-2.0
//
// Hypernetwork training: reward loss on one-step predictions, denoising
// score-matching regularization on preferred data, and their sum.
#pragma once

#include <filesystem>
#include <vector>

#include "hyperalign/hypernet.hpp"
#include "hyperalign/reward.hpp"
#include "hyperalign/training.hpp"

namespace hyperalign {

enum class LossMix { reward, reg, both };

const char* to_string(LossMix m);
LossMix loss_mix_from_string(const std::string& s);

struct AlignTrainConfig {
    long iterations = 1500;
    std::size_t batch_size = 128;
    double learning_rate = 1e-3;
    double t_min = 0.2;  // fraction of the process for the reward loss
    double t_max = 0.9;
    LossMix losses = LossMix::both;
    double ema_decay = 0.99;
    std::uint64_t seed = 0;

    bool use_reward() const { return losses != LossMix::reg; }
    bool use_reg() const { return losses != LossMix::reward; }
    void validate() const;
};

/// -mean R(x0|t, c): x0 drawn from `pool`, forward-noised to a step drawn
/// uniformly from [t_min, t_max] of the process, then predicted in one step
/// by the injected model. `mean_reward` receives mean R when non-null.
Var loss_reward(const HyperNet& hnet, std::span<const Var> psi, const DenoiserNet& net,
                std::span<const Var> theta, const ConditionedBatch& pool, const Process& process,
                const RewardSpec& spec, const AlignTrainConfig& config, RngStream& stream,
                double* mean_reward = nullptr);

/// mean eta_t * ||s_injected(x_t) - grad log q(x_t | x0)||^2 over preferred
/// x0. In VP terms the score gap is (eps - eps_pred) / sigma_t; in flow
/// terms it is (1 - t) / t * (x1 - x0 - v_pred).
Var loss_reg(const HyperNet& hnet, std::span<const Var> psi, const DenoiserNet& net, std::span<const Var> theta,
             const PreferenceSet& prefs, const Process& process, const AlignTrainConfig& config, RngStream& stream);

struct AlignStep {
    std::vector<Tensor> grads;  // d(total)/d(psi)
    double reward_loss = 0.0;
    double reg_loss = 0.0;
    double mean_reward = 0.0;
};

/// Streams used by iteration `iter`: fork(iter).fork(0) for the reward loss
/// and fork(iter).fork(1) for the regularizer.
RngStream align_stream(std::uint64_t seed, long iter, int which);

/// Loss values and gradient of one training iteration.
AlignStep align_gradient(const HyperNet& hnet, const DenoiserNet& net, const ConditionedBatch& pool,
                         const PreferenceSet& prefs, const Process& process, const RewardSpec& spec,
                         const AlignTrainConfig& config, long iter);

struct AlignCurves {
    std::vector<double> reward_loss;
    std::vector<double> reg_loss;
    std::vector<double> mean_reward;
    std::vector<double> ema;  // moving average of the enabled losses' sum

    /// CSV iter,L_R,L_G,mean_reward; disabled loss columns are omitted.
    void write_csv(const std::filesystem::path& path, LossMix mix) const;
};

struct AlignResult {
    HyperNet hnet;
    AlignCurves curves;
};

/// Optimizes psi only; theta is read through constant tape leaves.
AlignResult train_hyper(HyperNet hnet, const DenoiserNet& net, const ConditionedBatch& pool,
                        const PreferenceSet& prefs, const Process& process, const RewardSpec& spec,
                        const AlignTrainConfig& config);

/// Pool of base-model samples (the data proxy for the reward loss), `per`
/// rows per condition from trajectory streams (seed, i).
ConditionedBatch base_sample_pool(const Process& process, const DenoiserNet& net, std::size_t per,
                                  std::uint64_t seed);

}  // namespace hyperalign
