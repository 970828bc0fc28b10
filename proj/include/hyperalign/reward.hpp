// SPDX-License-Identifier: Apache-2.0
//
// Analytic rewards, the reward-tilted target on a grid, and the preference
// set drawn from it by rejection sampling.
#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hyperalign/autodiff.hpp"
#include "hyperalign/rng.hpp"
#include "hyperalign/tensor.hpp"
#include "hyperalign/training.hpp"

namespace hyperalign {

enum class RewardFamily { mode_pull, annulus, composite };

const char* to_string(RewardFamily f);
RewardFamily reward_family_from_string(const std::string& s);

/// mode_pull: -||x - target(c)||^2; annulus: -(||x|| - radius)^2;
/// composite: pull_weight * mode_pull + annulus_weight * annulus.
struct RewardSpec {
    RewardFamily family = RewardFamily::mode_pull;
    Tensor targets;  // (K, d), one target point per condition
    double radius = 1.0;
    double pull_weight = 1.0;
    double annulus_weight = 1.0;
    double gamma = 0.5;

    std::size_t num_conditions() const { return targets.rank() == 2 ? targets.dim(0) : 0; }
    std::size_t dim() const { return targets.rank() == 2 ? targets.dim(1) : 0; }
    /// Throws std::invalid_argument on gamma <= 0 or missing targets.
    void validate() const;
    /// Upper bound on R over all x and conditions: 0 unless a composite
    /// weight is negative, in which case R is unbounded above.
    double max_reward() const;
};

/// Targets at half of each mixture mode, i.e. pulled toward the origin.
RewardSpec default_reward(const MixtureSpec& mixture);

double reward_eval(std::span<const double> x, std::size_t c, const RewardSpec& spec);
/// Analytic gradient. The annulus term uses the zero vector at the origin,
/// where ||x|| is not differentiable.
std::vector<double> reward_grad(std::span<const double> x, std::size_t c, const RewardSpec& spec);

/// Row-wise rewards of (n, d) points: shape (n).
Tensor reward_batch(const Tensor& x, std::span<const std::size_t> cond, const RewardSpec& spec);
/// Row-wise gradients: shape (n, d).
Tensor reward_grad_batch(const Tensor& x, std::span<const std::size_t> cond, const RewardSpec& spec);
/// Graph version: (n, d) -> (n).
Var reward_graph(const Var& x, std::span<const std::size_t> cond, const RewardSpec& spec);

/// Square 2-D grid [lo, hi]^2 with resolution^2 cells.
struct GridSpec {
    double lo = -5.0;
    double hi = 5.0;
    std::size_t resolution = 256;

    double cell_width() const { return (hi - lo) / static_cast<double>(resolution); }
    double cell_area() const { return cell_width() * cell_width(); }
    double center(std::size_t i) const { return lo + (static_cast<double>(i) + 0.5) * cell_width(); }
    /// Flat cell index (row = x index, column = y index), or -1 outside.
    long cell_of(double x, double y) const;
    bool contains(double x, double y) const { return x >= lo && x < hi && y >= lo && y < hi; }
    void validate() const;
};

/// exp(R/gamma) would overflow.
class TiltOverflowError : public std::overflow_error {
public:
    TiltOverflowError(double max_ratio);
    double max_ratio() const { return max_ratio_; }

private:
    double max_ratio_;
};

/// Density of condition c at (x, y).
using GridDensity = std::function<double(std::size_t c, double x, double y)>;

/// Per-condition normalized cell masses of p(x|c) exp(R(x, c)/gamma) / Z_c.
struct TiltedTargetGrid {
    GridSpec grid;
    std::vector<std::vector<double>> mass;  // [c][i * res + j]
    std::vector<double> normalizer;         // Z_c in units of base density

    std::size_t num_conditions() const { return mass.size(); }
    /// Density (mass / cell area) of cell (i, j).
    double density(std::size_t c, std::size_t i, std::size_t j) const;
    /// Mean position under the grid distribution.
    std::vector<double> mean(std::size_t c) const;
    /// Expected reward under the grid distribution (midpoint rule).
    double mean_reward(std::size_t c, const RewardSpec& spec) const;
    /// Inverse-CDF draws on the grid, uniform within the chosen cell.
    Tensor sample(std::size_t c, std::size_t n, RngStream& stream) const;
    /// CSV with columns cond,x,y,density.
    void write_csv(const std::filesystem::path& path) const;
};

/// Midpoint-rule tilt of `base` on `grid`; `spec == nullptr` means R = 0.
/// Requires the grid to hold at least 99.9% of each condition's base mass.
TiltedTargetGrid tilted_target(const GridDensity& base, std::size_t num_conditions, const RewardSpec* spec,
                               const GridSpec& grid);

/// Base density of the mixture: component c for condition c.
GridDensity mixture_density(const MixtureSpec& mixture);

struct PreferenceSet {
    ConditionedBatch samples;
    std::vector<double> eta;  // eta[t - 1] for t = 1..T

    double eta_at(int t) const { return eta.at(static_cast<std::size_t>(t - 1)); }
    /// Throws unless every condition in [0, K) has samples and eta >= 0.
    void validate(std::size_t num_conditions) const;
};

/// Base sampler used by the preference generator: one point of condition c.
using PointSampler = std::function<std::vector<double>(std::size_t c, RngStream& stream)>;

class AcceptanceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Rejection-samples `per_condition` points per condition from the tilted
/// target: accept x ~ base with probability exp((R(x) - R_max) / gamma),
/// keeping only points inside `grid`. `budget` caps base draws per
/// condition; an acceptance rate below 1e-3 aborts.
PreferenceSet gen_preference_set(const PointSampler& base, const RewardSpec& spec, const GridSpec& grid,
                                 std::size_t per_condition, std::size_t budget, std::vector<double> eta,
                                 RngStream& stream);

}  // namespace hyperalign
