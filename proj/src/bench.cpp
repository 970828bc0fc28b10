// SPDX-License-Identifier: Apache-2.0
#include "hyperalign/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>

#include "hyperalign/baselines.hpp"
#include "hyperalign/checkpoint.hpp"
#include "hyperalign/pipeline.hpp"
#include "hyperalign/svg.hpp"

namespace hyperalign {

const std::vector<std::string>& bench_method_ids() {
    static const std::vector<std::string> ids = {"base", "guided", "bon", "eps_greedy", "hyper_S", "hyper_I", "hyper_P"};
    return ids;
}

Tensor run_method(const MethodContext& ctx, const std::string& method, std::span<const std::size_t> cond,
                  std::uint64_t seed, std::size_t offset) {
    const ExperimentConfig& cfg = *ctx.cfg;
    const DenoiserNet& net = *ctx.net;
    if (method == "base" || method == "guided") {
        auto streams = trajectory_streams(seed, cond.size(), offset);
        if (method == "base") return sample(ctx.process, net, cond, streams);
        return guided_sample(ctx.process, net, cond, streams, cfg.guidance, cfg.reward);
    }
    if (method == "bon") return best_of_n(ctx.process, net, cond, cfg.reward, cfg.search, seed, offset).samples;
    if (method == "eps_greedy") return eps_greedy(ctx.process, net, cond, cfg.reward, cfg.search, seed, offset).samples;
    if (method.rfind("hyper_", 0) == 0) {
        if (!ctx.hnet) throw std::invalid_argument("method " + method + " needs a hypernet checkpoint");
        StrategySpec strategy{strategy_from_string(method.substr(6)), {}};
        if (strategy.variant == Strategy::P) {
            if (!ctx.keysteps) throw std::invalid_argument("method hyper_P needs a keystep schedule");
            strategy.keysteps = *ctx.keysteps;
        }
        auto streams = trajectory_streams(seed, cond.size(), offset);
        return aligned_sample(ctx.process, net, *ctx.hnet, cond, streams, strategy).samples;
    }
    throw std::invalid_argument("unknown method '" + method + "'");
}

EvalReference make_reference(const ExperimentConfig& cfg) {
    EvalReference ref{experiment_target(cfg, true), experiment_target(cfg, false), {},
                      derive_seed(cfg.seed, SeedTag::bench_projections), cfg.bench.projections};
    RngStream stream(derive_seed(cfg.seed, SeedTag::bench_reference));
    for (std::size_t c = 0; c < cfg.mixture.num_conditions(); ++c)
        ref.data.push_back(sample_mixture_component(cfg.mixture, c, cfg.bench.reference_per_condition, stream));
    return ref;
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// grid_kl refuses sets with more than 5% of the mass off the grid; for a
// benchmark that is a measurement (the method left the support), not an error.
double kl_or_inf(const Tensor& x, const TiltedTargetGrid& target, std::size_t c) {
    std::size_t outside = 0;
    for (std::size_t i = 0; i < x.dim(0); ++i)
        if (target.grid.cell_of(x.at(i, 0), x.at(i, 1)) < 0) ++outside;
    if (static_cast<double>(outside) > 0.05 * static_cast<double>(x.dim(0))) return INFINITY;
    return grid_kl(x, target, c);
}

}  // namespace

std::vector<MetricsRecord> score_samples(const std::string& method, const Tensor& samples,
                                         std::span<const std::size_t> cond, const RewardSpec& spec,
                                         const EvalReference& ref, std::uint64_t seed) {
    const Tensor rewards = reward_batch(samples, cond, spec);
    const ConditionedBatch all{samples, std::vector<std::size_t>(cond.begin(), cond.end())};
    const auto moments = [](std::span<const double> r, double& mean, double& stderr_) {
        mean = 0.0;
        for (double v : r) mean += v;
        mean /= static_cast<double>(r.size());
        double ss = 0.0;
        for (double v : r) ss += (v - mean) * (v - mean);
        const double n = static_cast<double>(r.size());
        stderr_ = r.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
    };

    std::vector<MetricsRecord> out;
    MetricsRecord pooled{method, "all"};
    pooled.samples = cond.size();
    pooled.seed = seed;
    moments(rewards.values(), pooled.mean_reward, pooled.reward_stderr);
    const std::size_t K = ref.data.size();
    for (std::size_t c = 0; c < K; ++c) {
        const ConditionedBatch part = all.with_condition(c);
        if (part.size() == 0) continue;
        MetricsRecord r{method, std::to_string(c)};
        r.samples = part.size();
        r.seed = seed;
        moments(reward_batch(part.x0, part.cond, spec).values(), r.mean_reward, r.reward_stderr);
        r.kl_target = kl_or_inf(part.x0, ref.tilted, c);
        r.kl_base = kl_or_inf(part.x0, ref.base, c);
        const bool finite = part.x0.all_finite();
        r.sw2_data = finite ? sliced_w2(part.x0, ref.data[c], ref.projections, ref.projection_seed) : kNaN;
        r.diversity = finite && part.size() >= 2 ? diversity(part.x0) : kNaN;
        out.push_back(r);
    }
    // KL and SW2 of the pooled row average the per-condition values since
    // both compare against a conditional reference. Diversity is measured on
    // the pooled set, the only place where collapse across modes shows.
    const double used = static_cast<double>(out.size());
    for (const auto& r : out) {
        pooled.kl_target += r.kl_target / used;
        pooled.kl_base += r.kl_base / used;
        pooled.sw2_data += r.sw2_data / used;
    }
    pooled.diversity = samples.all_finite() && samples.dim(0) >= 2 ? diversity(samples) : kNaN;
    out.push_back(pooled);
    return out;
}

double time_method(const MethodContext& ctx, const std::string& method, std::size_t trajectories,
                   std::uint64_t seed) {
    if (trajectories == 0) throw std::invalid_argument("time_method: needs >= 1 trajectory");
    const std::size_t K = ctx.cfg->mixture.num_conditions();
    std::vector<double> secs;
    for (std::size_t i = 0; i < trajectories; ++i) {
        const std::size_t c[] = {i % K};
        const auto t0 = std::chrono::steady_clock::now();
        (void)run_method(ctx, method, c, seed, i);
        secs.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    std::nth_element(secs.begin(), secs.begin() + static_cast<long>(secs.size() / 2), secs.end());
    double med = secs[secs.size() / 2];
    if (secs.size() % 2 == 0) {
        const double lower = *std::max_element(secs.begin(), secs.begin() + static_cast<long>(secs.size() / 2));
        med = 0.5 * (med + lower);
    }
    return med;
}

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::filesystem::path or_default(const std::filesystem::path& p, const std::filesystem::path& dir, const char* name) {
    return p.empty() ? dir / name : p;
}

}  // namespace

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricsRecord>& records) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "method,condition,mean_reward,reward_stderr,kl_target,kl_base,sw2_data,diversity,samples,seed\n";
    for (const auto& r : records) {
        out << r.method << ',' << r.condition << ',' << fmt(r.mean_reward) << ',' << fmt(r.reward_stderr) << ','
            << fmt(r.kl_target) << ',' << fmt(r.kl_base) << ',' << fmt(r.sw2_data) << ',' << fmt(r.diversity) << ','
            << r.samples << ',' << r.seed << '\n';
    }
}

void write_timing_csv(const std::filesystem::path& path, const std::vector<MetricsRecord>& records) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "method,seconds_per_sample\n";
    for (const auto& r : records) out << r.method << ',' << fmt(r.seconds_per_sample) << '\n';
}

void write_samples_csv(const std::filesystem::path& path, const Tensor& samples, std::span<const std::size_t> cond,
                       const RewardSpec& spec) {
    const std::size_t d = spec.dim();
    if (samples.rank() != 2 || samples.dim(0) != cond.size() || (samples.dim(0) > 0 && samples.dim(1) != d))
        throw ShapeError("write_samples_csv: samples " + shape_str(samples.shape()) + " do not match " +
                         std::to_string(cond.size()) + " conditions of dimension " + std::to_string(d));
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (std::size_t k = 0; k < d; ++k) out << 'x' << k + 1 << ',';
    out << "cond,reward\n";
    const Tensor r = cond.empty() ? Tensor(Shape{0}) : reward_batch(samples, cond, spec);
    for (std::size_t i = 0; i < cond.size(); ++i) {
        for (std::size_t k = 0; k < d; ++k) out << fmt(samples.at(i, k)) << ',';
        out << cond[i] << ',' << fmt(r[i]) << '\n';
    }
}

std::string format_summary(const std::vector<MetricsRecord>& records) {
    std::ostringstream os;
    char line[256];
    std::snprintf(line, sizeof line, "%-11s %10s %9s %9s %9s %9s %9s %11s\n", "method", "reward", "stderr", "KL_tilt",
                  "KL_base", "SW2", "divers", "ms/sample");
    os << line;
    for (const auto& r : records) {
        std::snprintf(line, sizeof line, "%-11s %10.4f %9.4f %9.4f %9.4f %9.4f %9.4f %11.3f\n", r.method.c_str(),
                      r.mean_reward, r.reward_stderr, r.kl_target, r.kl_base, r.sw2_data, r.diversity,
                      1e3 * r.seconds_per_sample);
        os << line;
    }
    return os.str();
}

namespace {

std::vector<MetricsRecord> diverged_records(const std::string& method, std::span<const std::size_t> cond,
                                            std::size_t K, std::uint64_t seed) {
    std::vector<MetricsRecord> out;
    for (std::size_t c = 0; c <= K; ++c) {
        MetricsRecord r{method, c == K ? "all" : std::to_string(c), kNaN, kNaN, INFINITY, INFINITY, kNaN, kNaN};
        r.samples = c == K ? cond.size() : static_cast<std::size_t>(std::count(cond.begin(), cond.end(), c));
        r.seed = seed;
        out.push_back(r);
    }
    return out;
}

}  // namespace

BenchResult run_experiment(const ExperimentConfig& cfg) {
    const auto& methods = cfg.bench.methods;
    if (methods.empty()) throw ConfigError("config: 'bench.methods' is empty");
    const bool needs_hnet = std::any_of(methods.begin(), methods.end(), [](const std::string& m) {
        return m.rfind("hyper_", 0) == 0;
    });
    const auto base_path = or_default(cfg.bench.base_checkpoint, cfg.output_dir, "base.ckpt");
    const auto hyper_path = or_default(cfg.bench.hypernet_checkpoint, cfg.output_dir, "hypernet.ckpt");
    if (!std::filesystem::exists(base_path))
        throw CheckpointError("bench: missing base checkpoint " + base_path.string());
    if (needs_hnet && !std::filesystem::exists(hyper_path))
        throw CheckpointError("bench: missing hypernet checkpoint " + hyper_path.string());

    BenchResult result;
    result.config_hash = cfg.hash();
    const DenoiserNet net = load_denoiser(base_path);
    if (net.config() != cfg.denoiser)
        throw ConfigError("config: 'denoiser' does not match the architecture of " + base_path.string());
    result.base_hash = inspect_checkpoint(base_path).hash;
    std::optional<HyperNet> hnet;
    if (needs_hnet) {
        hnet = load_hypernet(hyper_path, net);
        result.hypernet_hash = inspect_checkpoint(hyper_path).hash;
    }

    MethodContext ctx{&cfg, cfg.process(), &net, hnet ? &*hnet : nullptr, std::nullopt};
    if (std::find(methods.begin(), methods.end(), "hyper_P") != methods.end()) ctx.keysteps = experiment_keysteps(cfg, net);

    const EvalReference ref = make_reference(cfg);
    const std::size_t K = cfg.mixture.num_conditions();
    const auto cond = cycling_conditions(cfg.bench.samples_per_condition * K, K);
    const std::uint64_t sample_seed = derive_seed(cfg.seed, SeedTag::bench_samples);
    const std::uint64_t timing_seed = derive_seed(cfg.seed, SeedTag::bench_timing);
    std::filesystem::create_directories(cfg.output_dir);

    for (const auto& m : methods) {
        // A diverging method (e.g. guidance at too large a scale) is a result
        // to report, so non-finite trajectories become NaN rows.
        std::optional<Tensor> x;
        try {
            x = run_method(ctx, m, cond, sample_seed);
        } catch (const NonFiniteError&) {
        }
        auto records = x ? score_samples(m, *x, cond, cfg.reward, ref, cfg.seed) : diverged_records(m, cond, K, cfg.seed);
        double secs = kNaN;
        try {
            secs = time_method(ctx, m, cfg.bench.timing_trajectories, timing_seed);
        } catch (const NonFiniteError&) {
        }
        for (auto& r : records) r.seconds_per_sample = secs;
        result.summary.push_back(records.back());
        result.per_condition.insert(result.per_condition.end(), records.begin(), records.end() - 1);
        if (cfg.bench.plots && x && x->all_finite()) {
            svg_samples_over_target(cfg.output_dir / "plots" / ("samples_" + m + ".svg"), m + " samples vs tilted target",
                                    ref.tilted, *x, cond);
        }
    }

    write_metrics_csv(cfg.output_dir / "metrics.csv", result.summary);
    write_metrics_csv(cfg.output_dir / "metrics_by_condition.csv", result.per_condition);
    write_timing_csv(cfg.output_dir / "timing.csv", result.summary);

    nlohmann::json prov = {{"seed", cfg.seed},
                           {"config_hash", result.config_hash},
                           {"base_checkpoint", base_path.string()},
                           {"base_hash", result.base_hash},
                           {"methods", methods},
                           {"sample_seed", sample_seed},
                           {"timing_seed", timing_seed},
                           {"config", cfg.to_json()}};
    if (needs_hnet) {
        prov["hypernet_checkpoint"] = hyper_path.string();
        prov["hypernet_hash"] = result.hypernet_hash;
    }
    if (ctx.keysteps) prov["keysteps"] = ctx.keysteps->steps;
    std::ofstream(cfg.output_dir / "provenance.json") << prov.dump(2) << '\n';
    return result;
}

}  // namespace hyperalign
