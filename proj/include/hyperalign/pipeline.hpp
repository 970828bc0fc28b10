// SPDX-License-Identifier: Apache-2.0
//
// Config-driven construction of every experiment artifact. Each stage draws
// from its own seed derived from the config seed, so stages can be rerun in
// isolation and still agree bitwise with a full run.
#pragma once

#include "hyperalign/align.hpp"
#include "hyperalign/config.hpp"

namespace hyperalign {

enum class SeedTag : std::uint64_t {
    dataset = 1,
    denoiser_init,
    preferences,
    pool,
    hypernet_init,
    keystep_probes,
    bench_samples,
    bench_reference,
    bench_projections,
    bench_timing,
};

std::uint64_t derive_seed(std::uint64_t seed, SeedTag tag);

ConditionedBatch experiment_dataset(const ExperimentConfig& cfg);
TrainResult run_train_base(const ExperimentConfig& cfg);

PreferenceSet experiment_preferences(const ExperimentConfig& cfg);
ConditionedBatch experiment_pool(const ExperimentConfig& cfg, const DenoiserNet& net);
HyperNet experiment_hypernet(const ExperimentConfig& cfg, const DenoiserNet& net);
AlignResult run_align(const ExperimentConfig& cfg, const DenoiserNet& net);

/// probes_per_condition probes of every condition, interleaved.
std::vector<std::size_t> keystep_probes(const ExperimentConfig& cfg);
KeystepSelection run_select_keysteps(const ExperimentConfig& cfg, const DenoiserNet& net);
/// The sidecar when the config names one, otherwise a fresh selection.
KeystepSchedule experiment_keysteps(const ExperimentConfig& cfg, const DenoiserNet& net);

/// Grid target of the data density, tilted by the reward when `tilted`.
TiltedTargetGrid experiment_target(const ExperimentConfig& cfg, bool tilted);

/// Conditions 0..K-1 cycling over n rows.
std::vector<std::size_t> cycling_conditions(std::size_t n, std::size_t K);

}  // namespace hyperalign
