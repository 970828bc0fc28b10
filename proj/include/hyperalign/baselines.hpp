// SPDX-License-Identifier: Apache-2.0
//
// Test-time alignment baselines: reward-gradient guidance, Best-of-N and
// epsilon-greedy search over the initial noise.
#pragma once

#include <span>
#include <vector>

#include "hyperalign/reward.hpp"
#include "hyperalign/sampler.hpp"

namespace hyperalign {

enum class JacobianMode { full, stopgrad };

const char* to_string(JacobianMode m);
JacobianMode jacobian_mode_from_string(const std::string& s);

struct GuidanceConfig {
    double scale = 0.02;
    JacobianMode jacobian = JacobianMode::full;

    void validate() const;
};

struct SearchBudget {
    std::size_t candidates = 20;   // Best-of-N
    std::size_t iterations = 20;   // epsilon-greedy rounds
    std::size_t proposals = 4;     // epsilon-greedy candidates per round
    double perturbation_std = 0.5;

    void validate() const;
};

/// d R(x0|t) / d x_t for VP, x0|t = (x_t - sigma_t eps_theta) / sqrt(abar_t).
/// Full mode differentiates through eps_theta; stopgrad mode treats it as
/// constant, leaving (1 / sqrt(abar_t)) grad R(x0|t).
Tensor guidance_grad_vp(const DenoiserNet& net, const Tensor& x_t, int t, std::span<const std::size_t> cond,
                        const DiffusionSchedule& sched, const RewardSpec& spec,
                        JacobianMode mode = JacobianMode::full);

/// d R(x_t - t v_theta) / d x_t for t in (0, 1).
Tensor guidance_grad_flow(const DenoiserNet& net, const Tensor& x_t, double t, std::span<const std::size_t> cond,
                          const RewardSpec& spec, JacobianMode mode = JacobianMode::full);

/// Guidance at step k of either process (score units).
Tensor guidance_grad(const Process& process, const DenoiserNet& net, const Tensor& x, int k,
                     std::span<const std::size_t> cond, const RewardSpec& spec, JacobianMode mode);

/// Base sampler with the score shifted by scale * guidance at every step.
/// The flow start point t = 1 is left unguided.
Tensor guided_sample(const Process& process, const DenoiserNet& net, std::span<const std::size_t> cond,
                     std::span<RngStream> streams, const GuidanceConfig& guidance, const RewardSpec& spec,
                     const StepObserver& observer = {});

struct SearchResult {
    Tensor samples;                               // (n, d)
    std::vector<std::vector<double>> rewards;     // per output sample: candidate rewards
    std::vector<std::size_t> chosen;              // Best-of-N: winning candidate index
    std::vector<std::vector<double>> incumbent;   // epsilon-greedy: reward after each round
};

/// N independent trajectories per output sample; candidate j of sample i uses
/// stream (seed, (offset + i) * N + j). Keeps the max reward, ties to the
/// lowest index.
SearchResult best_of_n(const Process& process, const DenoiserNet& net, std::span<const std::size_t> cond,
                       const RewardSpec& spec, const SearchBudget& budget, std::uint64_t seed,
                       std::size_t offset = 0);

/// Local search over the initial noise of trajectory (seed, offset + i).
/// In-trajectory noise is replayed from the same stream state for every
/// candidate, so a candidate is a pure function of its initial noise.
/// Proposals replace the incumbent only when strictly better.
SearchResult eps_greedy(const Process& process, const DenoiserNet& net, std::span<const std::size_t> cond,
                        const RewardSpec& spec, const SearchBudget& budget, std::uint64_t seed,
                        std::size_t offset = 0);

}  // namespace hyperalign
