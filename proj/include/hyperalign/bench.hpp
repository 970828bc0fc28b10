// SPDX-License-Identifier: Apache-2.0
//
// Experiment runner: samples every configured method from shared trajectory
// streams and scores the results against the data and the tilted target.
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hyperalign/config.hpp"
#include "hyperalign/metrics.hpp"

namespace hyperalign {

/// Method ids accepted by the runner, in canonical order.
const std::vector<std::string>& bench_method_ids();

struct MetricsRecord {
    std::string method;
    std::string condition;  // condition index, or "all" for the pooled row
    double mean_reward = 0.0;
    double reward_stderr = 0.0;
    double kl_target = 0.0;
    double kl_base = 0.0;
    double sw2_data = 0.0;
    double diversity = 0.0;
    double seconds_per_sample = 0.0;
    std::size_t samples = 0;
    std::uint64_t seed = 0;
};

/// Everything a method needs to draw samples.
struct MethodContext {
    const ExperimentConfig* cfg = nullptr;
    Process process;
    const DenoiserNet* net = nullptr;
    const HyperNet* hnet = nullptr;        // required by hyper_*
    std::optional<KeystepSchedule> keysteps;  // required by hyper_P
};

/// Samples of `method` for conditions `cond`, trajectory i drawn from
/// (seed, offset + i). Throws when the context lacks what the method needs.
Tensor run_method(const MethodContext& ctx, const std::string& method, std::span<const std::size_t> cond,
                  std::uint64_t seed, std::size_t offset = 0);

/// Reference data and targets shared by every method of one experiment.
struct EvalReference {
    TiltedTargetGrid tilted;
    TiltedTargetGrid base;
    std::vector<Tensor> data;  // per condition
    std::uint64_t projection_seed = 0;
    std::size_t projections = 128;
};

EvalReference make_reference(const ExperimentConfig& cfg);

/// One record per condition followed by the pooled "all" record.
std::vector<MetricsRecord> score_samples(const std::string& method, const Tensor& samples,
                                         std::span<const std::size_t> cond, const RewardSpec& spec,
                                         const EvalReference& ref, std::uint64_t seed);

/// Median wall-clock seconds of one trajectory, over `trajectories` runs.
double time_method(const MethodContext& ctx, const std::string& method, std::size_t trajectories,
                   std::uint64_t seed);

struct BenchResult {
    std::vector<MetricsRecord> summary;        // one pooled record per method
    std::vector<MetricsRecord> per_condition;  // method x condition
    std::string config_hash;
    std::string base_hash;
    std::string hypernet_hash;
};

/// Runs every configured method and writes metrics.csv (deterministic),
/// metrics_by_condition.csv, timing.csv, provenance.json and plots under
/// the output directory. Missing checkpoints are rejected by path.
BenchResult run_experiment(const ExperimentConfig& cfg);

/// metrics.csv omits wall-clock so reruns are byte-identical; timing.csv
/// holds it separately.
void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRecord>& records);
void write_timing_csv(const std::filesystem::path& path, const std::vector<MetricsRecord>& records);
/// CSV x1..xd,cond,reward; zero rows still get the header.
void write_samples_csv(const std::filesystem::path& path, const Tensor& samples, std::span<const std::size_t> cond,
                       const RewardSpec& spec);
std::string format_summary(const std::vector<MetricsRecord>& records);

}  // namespace hyperalign
