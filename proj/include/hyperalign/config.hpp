// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration: one strict JSON document drives every command.
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "hyperalign/align.hpp"
#include "hyperalign/baselines.hpp"
#include "hyperalign/hypernet.hpp"
#include "hyperalign/reward.hpp"
#include "hyperalign/training.hpp"

namespace hyperalign {

/// Schema or value error; the message names the offending key path.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct PreferenceParams {
    std::size_t per_condition = 2000;
    std::size_t budget = 200000;  // base draws per condition
    std::vector<double> eta;      // empty: constant eta_default
    double eta_default = 1.0;

    /// eta_t for t = 1..T.
    std::vector<double> eta_for(int T) const;
};

struct KeystepParams {
    std::size_t count = 5;                  // M
    std::size_t probes_per_condition = 16;
    std::filesystem::path file;             // optional sidecar; empty selects on the fly
};

struct BenchParams {
    std::vector<std::string> methods = {"base", "guided", "bon", "eps_greedy", "hyper_S", "hyper_I", "hyper_P"};
    std::size_t samples_per_condition = 1000;
    std::size_t timing_trajectories = 50;
    std::size_t projections = 128;
    std::size_t reference_per_condition = 2000;  // data draws for sliced W2
    std::filesystem::path base_checkpoint;       // empty: <output_dir>/base.ckpt
    std::filesystem::path hypernet_checkpoint;   // empty: <output_dir>/hypernet.ckpt
    bool plots = true;
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    Paradigm paradigm = Paradigm::vp;
    std::filesystem::path output_dir = "out";

    MixtureSpec mixture = default_mixture();
    std::size_t train_size = 20000;

    int steps = 100;
    double beta_min = 1e-3;
    double beta_max = 0.2;

    DenoiserConfig denoiser;
    HyperNetConfig hypernet;
    RewardSpec reward;
    GridSpec grid;
    PreferenceParams preference;
    TrainConfig train;
    AlignTrainConfig align;
    std::size_t pool_per_condition = 1000;
    KeystepParams keysteps;
    GuidanceConfig guidance;
    SearchBudget search;
    BenchParams bench;

    Process process() const;
    /// Replaces the seed everywhere it was copied into sub-configs.
    void reseed(std::uint64_t s);
    /// Full echo with every default filled in.
    nlohmann::json to_json() const;
    /// 16-hex-digit digest of the canonical JSON echo.
    std::string hash() const;
};

/// Parses a config document. Relative paths resolve against `base_dir`.
/// Unknown keys, wrong types and a missing seed raise ConfigError.
ExperimentConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = ".");
ExperimentConfig load_config(const std::filesystem::path& path);

/// Keystep sidecar: {"T": ..., "steps": [...]}.
void write_keysteps(const std::filesystem::path& path, const KeystepSchedule& schedule);
KeystepSchedule read_keysteps(const std::filesystem::path& path);

}  // namespace hyperalign
