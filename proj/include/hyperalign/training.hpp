// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "hyperalign/autodiff.hpp"
#include "hyperalign/denoiser.hpp"
#include "hyperalign/diffusion.hpp"
#include "hyperalign/rng.hpp"

namespace hyperalign {

/// Clean data rows with one condition id per row.
struct ConditionedBatch {
    Tensor x0;
    std::vector<std::size_t> cond;

    std::size_t size() const { return cond.size(); }
    /// Throws unless x0 is (cond.size(), dim).
    void validate(std::size_t dim) const;
    /// Rows whose condition equals `c`.
    ConditionedBatch with_condition(std::size_t c) const;
};

/// Isotropic Gaussian mixture, one component per condition id.
struct MixtureSpec {
    Tensor modes;  // (K, d)
    double std = 0.3;

    std::size_t num_conditions() const { return modes.dim(0); }
    std::size_t dim() const { return modes.dim(1); }
    /// Density of component c at x.
    double density(std::size_t c, std::span<const double> x) const;
};

/// Four modes at (+-2, +-2) with std 0.3.
MixtureSpec default_mixture();

/// n rows, condition ids cycling 0..K-1.
ConditionedBatch make_mixture_dataset(const MixtureSpec& spec, std::size_t n, RngStream& stream);
/// n rows of component c.
Tensor sample_mixture_component(const MixtureSpec& spec, std::size_t c, std::size_t n, RngStream& stream);

/// CSV with header x1..xd,cond.
ConditionedBatch read_dataset_csv(const std::filesystem::path& path);
void write_dataset_csv(const std::filesystem::path& path, const ConditionedBatch& data);

/// Noise prediction at per-row VP steps.
using EpsilonModel = std::function<Tensor(const Tensor& x_t, std::span<const int> steps, std::span<const std::size_t> cond)>;

/// Denoising score matching with unit weight in noise space:
/// mean over rows of ||eps_model(x_t, t, c) - eps||^2, t ~ U{1..T}.
double dsm_loss(const EpsilonModel& model, const ConditionedBatch& batch, const DiffusionSchedule& sched,
                RngStream& stream);
double dsm_loss(const DenoiserNet& net, const ConditionedBatch& batch, const DiffusionSchedule& sched,
                RngStream& stream);

/// Graph version for training; `params` from net.bind(tape, true).
Var dsm_loss_graph(const DenoiserNet& net, std::span<const Var> params, const ConditionedBatch& batch,
                   const DiffusionSchedule& sched, RngStream& stream);
/// Rectified-flow regression of v_theta onto x1 - x0, t ~ U(0, 1).
Var flow_matching_loss_graph(const DenoiserNet& net, std::span<const Var> params, const ConditionedBatch& batch,
                             RngStream& stream);

struct TrainConfig {
    long iterations = 4000;
    std::size_t batch_size = 256;
    double learning_rate = 1e-3;
    double ema_decay = 0.99;
    double loss_threshold = 0.0;  // stop once the EMA loss drops below this
    std::uint64_t seed = 0;
};

/// Training loss exceeded 10x its initial value for 100 consecutive steps.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainResult {
    DenoiserNet net;
    std::vector<double> losses;
    std::vector<double> ema;
};

/// Monitors a loss stream for divergence and maintains its moving average.
class LossMonitor {
public:
    explicit LossMonitor(double ema_decay) : decay_(ema_decay) {}
    /// Records one loss; throws DivergenceError when the guard trips.
    double push(double loss, long iteration);
    double ema() const { return ema_; }

private:
    double decay_;
    double initial_ = 0.0;
    double ema_ = 0.0;
    long above_ = 0;
    bool started_ = false;
};

TrainResult train_base(DenoiserNet net, const ConditionedBatch& data, const Process& process,
                       const TrainConfig& config);

/// Random minibatch (with replacement).
ConditionedBatch draw_minibatch(const ConditionedBatch& data, std::size_t n, RngStream& stream);

}  // namespace hyperalign
