// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "hyperalign/denoiser.hpp"
#include "hyperalign/diffusion.hpp"

namespace hyperalign {

/// A trajectory produced a non-finite state; `step` is the offending index.
class NonFiniteError : public std::runtime_error {
public:
    NonFiniteError(int step, const std::string& what);
    int step() const { return step_; }

private:
    int step_;
};

/// One stream per trajectory, keyed by (seed, offset + i). Sampling results
/// are therefore independent of how trajectories are batched.
std::vector<RngStream> trajectory_streams(std::uint64_t seed, std::size_t count, std::size_t offset = 0);

/// Row i drawn from streams[i]; shape (streams.size(), dim).
Tensor draw_rows(std::span<RngStream> streams, std::size_t dim);

/// Score from a noise prediction: -eps / sigma_t.
Tensor score_from_epsilon(const Tensor& eps, double sigma);

/// x_{t-1} from x_t under the VP update with score -eps_theta / sigma_t. The
/// noise term is dropped at t = 1. `score_shift`, when given, is added to the
/// score before the update.
Tensor vp_sample_step(const DenoiserNet& net, const Tensor& x_t, int t, std::span<const std::size_t> cond,
                      const DiffusionSchedule& sched, std::span<RngStream> streams, const LoraDelta* delta = nullptr,
                      const Tensor* score_shift = nullptr);

/// Rectified-flow Euler step x + dt * v_theta(x, t) for t in (0, 1]; dt < 0
/// integrates toward data. Algebraically identical to flow_update with the
/// score recovered from v_theta, and well defined at the t = 1 start point.
Tensor flow_sample_step(const DenoiserNet& net, const Tensor& x_t, double t, double dt,
                        std::span<const std::size_t> cond, const LoraDelta* delta = nullptr,
                        const Tensor* score_shift = nullptr);

/// Paradigm-dispatching transition from step k to k - 1.
Tensor sample_step(const Process& process, const DenoiserNet& net, const Tensor& x, int k,
                   std::span<const std::size_t> cond, std::span<RngStream> streams, const LoraDelta* delta = nullptr,
                   const Tensor* score_shift = nullptr);

/// Graph-side one-step clean-data prediction at per-row VP steps.
Var vp_predict_x0(const DenoiserNet& net, std::span<const Var> params, const Var& x, std::span<const int> steps,
                  const DiffusionSchedule& sched, std::span<const std::size_t> cond, const LoraVars* delta = nullptr);
/// Graph-side flow prediction x - t * v_theta at per-row times.
Var flow_predict_x0(const DenoiserNet& net, std::span<const Var> params, const Var& x, std::span<const double> times,
                    std::span<const std::size_t> cond, const LoraVars* delta = nullptr);
/// Graph-side prediction at a common step k of `process`.
Var predict_x0(const Process& process, const DenoiserNet& net, std::span<const Var> params, const Var& x, int k,
               std::span<const std::size_t> cond, const LoraVars* delta = nullptr);
/// Value-only prediction at step k.
Tensor predict_x0(const Process& process, const DenoiserNet& net, const Tensor& x, int k,
                  std::span<const std::size_t> cond, const LoraDelta* delta = nullptr);

/// Called with (k, x_k) before the transition out of step k.
using StepObserver = std::function<void(int, const Tensor&)>;
/// Supplies the delta used for the transition out of step k (may be null).
using DeltaSchedule = std::function<const LoraDelta*(int, const Tensor&)>;

/// Pure-noise start state drawn from the trajectory streams.
Tensor initial_noise(const DenoiserNet& net, std::span<RngStream> streams);

/// Full reverse trajectory from x_init to the terminal sample.
Tensor run_chain(const Process& process, const DenoiserNet& net, Tensor x_init, std::span<const std::size_t> cond,
                 std::span<RngStream> streams, const DeltaSchedule& deltas = {}, const StepObserver& observer = {});

/// Base sampler: draws the start noise, then runs the chain.
Tensor sample(const Process& process, const DenoiserNet& net, std::span<const std::size_t> cond,
              std::span<RngStream> streams, const StepObserver& observer = {});

}  // namespace hyperalign
