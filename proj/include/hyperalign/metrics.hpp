// SPDX-License-Identifier: Apache-2.0
//
// Sample-quality metrics and LoRA dynamics analyses.
#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "hyperalign/hypernet.hpp"
#include "hyperalign/reward.hpp"

namespace hyperalign {

/// Cell mass added to every cell of the empirical histogram before
/// renormalization.
inline constexpr double kGridKlSmoothing = 1e-6;

/// KL(empirical || target) for samples of condition c on the target grid.
/// Requires >= 1000 samples, at most 5% of them outside the grid.
double grid_kl(const Tensor& samples, const TiltedTargetGrid& target, std::size_t c);

/// Mean over `n_projections` random unit directions of the 1-D W2 distance
/// between projected samples. Unequal sizes use quantile matching on the
/// union of both empirical CDF breakpoints.
double sliced_w2(const Tensor& a, const Tensor& b, std::size_t n_projections, std::uint64_t seed);

/// Mean pairwise l2 distance.
double diversity(const Tensor& samples);

struct LoraDriftReport {
    std::vector<int> steps;       // descending, steps.front() == T
    std::vector<double> cosine;   // vs the step-T delta
    std::vector<double> l1_change;  // ||d_t - d_T||_1 / ||d_T||_1
};

/// Delta log with every step's deltas flattened: rows[e] is (n, D) for
/// steps[e], steps descending.
struct FlatDeltaLog {
    std::vector<int> steps;
    std::vector<Tensor> rows;

    void validate() const;
};

FlatDeltaLog flatten_log(std::span<const DeltaLogEntry> log);

/// CSV step,row,cond,p0..p{D-1}; one line per (step, row).
void write_delta_log(const std::filesystem::path& path, const FlatDeltaLog& log, std::span<const std::size_t> cond);
/// Errors name the offending line. `cond`, when given, receives the
/// condition column of the first step.
FlatDeltaLog read_delta_log(const std::filesystem::path& path, std::vector<std::size_t>* cond = nullptr);

/// Drift of one trajectory row through a strategy-S delta log.
LoraDriftReport lora_drift(std::span<const DeltaLogEntry> log, std::size_t row = 0);
LoraDriftReport lora_drift(const FlatDeltaLog& log, std::size_t row = 0);

struct PcaResult {
    Tensor coords;                 // (n, 2) projections onto the top-2 directions
    std::vector<double> explained;  // top-2 explained-variance shares
};

/// Top-2 principal components of the rows of `points` (n >= 3).
PcaResult pca2(const Tensor& points);

struct LoraPcaStep {
    int step = 0;
    PcaResult pca;
    double projected_variance = 0.0;  // mean squared norm of the top-2 coordinates
};

/// Per-step PCA of the flattened deltas of all logged rows.
std::vector<LoraPcaStep> lora_pca(const FlatDeltaLog& log, std::span<const int> steps);

/// Spearman rank correlation (average ranks for ties).
double spearman(std::span<const double> a, std::span<const double> b);

}  // namespace hyperalign
