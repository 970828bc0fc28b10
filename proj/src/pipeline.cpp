// SPDX-License-Identifier: Apache-2.0
#include "hyperalign/pipeline.hpp"

#include <filesystem>

namespace hyperalign {

std::uint64_t derive_seed(std::uint64_t seed, SeedTag tag) {
    return RngStream(seed).fork(static_cast<std::uint64_t>(tag)).next_u64();
}

std::vector<std::size_t> cycling_conditions(std::size_t n, std::size_t K) {
    std::vector<std::size_t> cond(n);
    for (std::size_t i = 0; i < n; ++i) cond[i] = i % K;
    return cond;
}

ConditionedBatch experiment_dataset(const ExperimentConfig& cfg) {
    RngStream stream(derive_seed(cfg.seed, SeedTag::dataset));
    return make_mixture_dataset(cfg.mixture, cfg.train_size, stream);
}

TrainResult run_train_base(const ExperimentConfig& cfg) {
    DenoiserNet net(cfg.denoiser, RngStream(derive_seed(cfg.seed, SeedTag::denoiser_init)));
    return train_base(std::move(net), experiment_dataset(cfg), cfg.process(), cfg.train);
}

PreferenceSet experiment_preferences(const ExperimentConfig& cfg) {
    const MixtureSpec& mix = cfg.mixture;
    const PointSampler base = [&mix](std::size_t c, RngStream& s) {
        const Tensor t = sample_mixture_component(mix, c, 1, s);
        return std::vector<double>(t.values().begin(), t.values().end());
    };
    RngStream stream(derive_seed(cfg.seed, SeedTag::preferences));
    return gen_preference_set(base, cfg.reward, cfg.grid, cfg.preference.per_condition, cfg.preference.budget,
                              cfg.preference.eta_for(cfg.steps), stream);
}

ConditionedBatch experiment_pool(const ExperimentConfig& cfg, const DenoiserNet& net) {
    return base_sample_pool(cfg.process(), net, cfg.pool_per_condition, derive_seed(cfg.seed, SeedTag::pool));
}

HyperNet experiment_hypernet(const ExperimentConfig& cfg, const DenoiserNet& net) {
    return build_hypernet(cfg.hypernet, net, derive_seed(cfg.seed, SeedTag::hypernet_init));
}

AlignResult run_align(const ExperimentConfig& cfg, const DenoiserNet& net) {
    if (net.config() != cfg.denoiser)
        throw ConfigError("config: 'denoiser' does not match the architecture of the supplied base checkpoint");
    return train_hyper(experiment_hypernet(cfg, net), net, experiment_pool(cfg, net), experiment_preferences(cfg),
                       cfg.process(), cfg.reward, cfg.align);
}

std::vector<std::size_t> keystep_probes(const ExperimentConfig& cfg) {
    return cycling_conditions(cfg.keysteps.probes_per_condition * cfg.mixture.num_conditions(),
                              cfg.mixture.num_conditions());
}

KeystepSelection run_select_keysteps(const ExperimentConfig& cfg, const DenoiserNet& net) {
    return select_keysteps(cfg.process(), net, keystep_probes(cfg), cfg.keysteps.count,
                           derive_seed(cfg.seed, SeedTag::keystep_probes));
}

KeystepSchedule experiment_keysteps(const ExperimentConfig& cfg, const DenoiserNet& net) {
    if (cfg.keysteps.file.empty()) return run_select_keysteps(cfg, net).schedule;
    KeystepSchedule k = read_keysteps(cfg.keysteps.file);
    if (k.T != cfg.steps)
        throw ConfigError("keysteps: " + cfg.keysteps.file.string() + " is for T = " + std::to_string(k.T) +
                          ", the config has " + std::to_string(cfg.steps) + " steps");
    return k;
}

TiltedTargetGrid experiment_target(const ExperimentConfig& cfg, bool tilted) {
    return tilted_target(mixture_density(cfg.mixture), cfg.mixture.num_conditions(), tilted ? &cfg.reward : nullptr,
                         cfg.grid);
}

}  // namespace hyperalign
