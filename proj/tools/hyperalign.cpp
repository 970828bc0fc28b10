// SPDX-License-Identifier: Apache-2.0
//
// hyperalign command-line driver. Every failure prints one line
//   error[<category>]: <message>
// to stderr and exits nonzero (2 for usage, 1 otherwise).
#include <CLI11.hpp>
#include <Eigen/Core>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <optional>

#include "hyperalign/baselines.hpp"
#include "hyperalign/bench.hpp"
#include "hyperalign/checkpoint.hpp"
#include "hyperalign/pipeline.hpp"
#include "hyperalign/serialize.hpp"
#include "hyperalign/svg.hpp"

using namespace hyperalign;
namespace fs = std::filesystem;

namespace {

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    int threads = 1;
};

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

ExperimentConfig load(const Globals& g) {
    if (g.config.empty()) throw UsageError("--config is required for this command");
    if (!fs::exists(g.config)) throw ConfigError("config: file not found: " + g.config);
    ExperimentConfig cfg = load_config(g.config);
    if (g.seed) cfg.reseed(*g.seed);
    if (!g.out.empty()) cfg.output_dir = g.out;
    fs::create_directories(cfg.output_dir);
    return cfg;
}

fs::path out_dir(const Globals& g) {
    const fs::path p = g.out.empty() ? fs::path("out") : fs::path(g.out);
    fs::create_directories(p);
    return p;
}

fs::path pick(const std::string& flag, const fs::path& dflt) { return flag.empty() ? dflt : fs::path(flag); }

fs::path default_base(const ExperimentConfig& cfg) {
    return cfg.bench.base_checkpoint.empty() ? cfg.output_dir / "base.ckpt" : cfg.bench.base_checkpoint;
}

fs::path default_hyper(const ExperimentConfig& cfg) {
    return cfg.bench.hypernet_checkpoint.empty() ? cfg.output_dir / "hypernet.ckpt" : cfg.bench.hypernet_checkpoint;
}

void require_file(const fs::path& p, const char* what) {
    if (!fs::exists(p)) throw CheckpointError(std::string("missing ") + what + " " + p.string());
}

void write_curve(const fs::path& path, const std::vector<double>& loss, const std::vector<double>& ema) {
    std::ofstream out(path);
    out << "iter,loss,ema\n";
    out.precision(17);
    for (std::size_t i = 0; i < loss.size(); ++i) out << i << ',' << loss[i] << ',' << ema[i] << '\n';
}

std::vector<std::size_t> sample_conditions(std::size_t count, std::size_t K, long fixed) {
    if (fixed >= 0) {
        if (static_cast<std::size_t>(fixed) >= K)
            throw UsageError("--condition " + std::to_string(fixed) + " is outside [0, " + std::to_string(K) + ")");
        return std::vector<std::size_t>(count, static_cast<std::size_t>(fixed));
    }
    return cycling_conditions(count, K);
}

void write_keystep_report(const fs::path& dir, const KeystepSelection& sel) {
    std::ofstream out(dir / "keystep_profile.csv");
    out << "t,d,curvature\n";
    out.precision(17);
    for (std::size_t i = 0; i < sel.profile.size(); ++i) out << i + 1 << ',' << sel.profile[i] << ',' << sel.curvature[i] << '\n';
    Series d{"d_t", {}, {}}, k{"curvature", {}, {}};
    for (std::size_t i = 0; i < sel.profile.size(); ++i) {
        d.x.push_back(static_cast<double>(i + 1));
        d.y.push_back(sel.profile[i]);
        k.x.push_back(static_cast<double>(i + 1));
        k.y.push_back(sel.curvature[i]);
    }
    svg_line_chart(dir / "keystep_profile.svg", "relative change and curvature", "t", "value", {d, k});
}

std::string join(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

// ---- commands ---------------------------------------------------------------

void cmd_train_base(const Globals& g) {
    const ExperimentConfig cfg = load(g);
    const TrainResult res = run_train_base(cfg);
    const fs::path ckpt = cfg.output_dir / "base.ckpt";
    const std::string hash = save_denoiser(ckpt, res.net);
    write_curve(cfg.output_dir / "base_loss.csv", res.losses, res.ema);
    std::cout << "base checkpoint " << ckpt.string() << " hash " << hash << " final_ema "
              << (res.ema.empty() ? 0.0 : res.ema.back()) << '\n';
}

void cmd_align(const Globals& g, const std::string& base_flag, const std::string& loss_flag, bool dump) {
    ExperimentConfig cfg = load(g);
    if (!loss_flag.empty()) {
        try {
            cfg.align.losses = loss_mix_from_string(loss_flag);
        } catch (const std::invalid_argument& e) {
            throw UsageError(std::string("--loss: ") + e.what());
        }
    }
    const fs::path base = pick(base_flag, default_base(cfg));
    require_file(base, "base checkpoint");
    const DenoiserNet net = load_denoiser(base);
    const AlignResult res = run_align(cfg, net);
    const fs::path ckpt = cfg.output_dir / "hypernet.ckpt";
    const std::string hash = save_hypernet(ckpt, res.hnet, net);
    res.curves.write_csv(cfg.output_dir / "align_loss.csv", cfg.align.losses);
    std::cout << "hypernet checkpoint " << ckpt.string() << " hash " << hash << '\n';
    if (dump) {
        // Deltas on a probe batch of every condition at every step.
        const Process process = cfg.process();
        const auto cond = cycling_conditions(4 * cfg.mixture.num_conditions(), cfg.mixture.num_conditions());
        RngStream probe(derive_seed(cfg.seed, SeedTag::keystep_probes));
        const Tensor x = probe.gaussian({cond.size(), cfg.mixture.dim()});
        double max_abs = 0.0;
        for (int k = process.steps(); k >= 1; --k) {
            const LoraDelta d = predict_lora(res.hnet, process, x, k, cond);
            for (std::size_t l = 0; l < d.factors.size(); ++l)
                for (std::size_t i = 0; i < d.batch(); ++i) {
                    const Tensor e = d.effective(l, i);
                    for (double v : e.values()) max_abs = std::max(max_abs, std::abs(v));
                }
        }
        std::cout << "delta_max_abs " << max_abs << " zero_delta " << (max_abs == 0.0 ? "true" : "false") << '\n';
    }
}

struct SampleFlags {
    std::string base, hypernet, strategy = "base", keysteps, delta_log;
    std::size_t count = 0;
    long condition = -1;
    std::size_t n = 0;
    bool select = false;
};

void cmd_sample(const Globals& g, const SampleFlags& f) {
    const ExperimentConfig cfg = load(g);
    static const std::vector<std::string> strategies = {"base", "guided", "bon", "eps_greedy", "S", "I", "P"};
    if (std::find(strategies.begin(), strategies.end(), f.strategy) == strategies.end())
        throw UsageError("--strategy must be one of base, guided, bon, eps_greedy, S, I, P");
    const bool hyper = f.strategy == "S" || f.strategy == "I" || f.strategy == "P";
    const bool has_keystep_file = !f.keysteps.empty() || !cfg.keysteps.file.empty();
    if (f.strategy == "P" && !has_keystep_file && !f.select)
        throw UsageError("strategy P needs a keystep file (--keysteps or keysteps.file) or --select-keysteps");
    if (!f.delta_log.empty() && f.strategy != "S")
        throw UsageError("--delta-log is only available for strategy S");

    const fs::path base = pick(f.base, default_base(cfg));
    require_file(base, "base checkpoint");
    const DenoiserNet net = load_denoiser(base);
    std::optional<HyperNet> hnet;
    if (hyper) {
        const fs::path hp = pick(f.hypernet, default_hyper(cfg));
        require_file(hp, "hypernet checkpoint");
        hnet = load_hypernet(hp, net);
    }
    ExperimentConfig run = cfg;
    if (f.n > 0) run.search.candidates = f.n;
    run.search.validate();

    MethodContext ctx{&run, run.process(), &net, hnet ? &*hnet : nullptr, std::nullopt};
    if (f.strategy == "P") {
        if (!f.keysteps.empty()) {
            ctx.keysteps = read_keysteps(f.keysteps);
        } else if (!cfg.keysteps.file.empty()) {
            ctx.keysteps = read_keysteps(cfg.keysteps.file);
        } else {
            ctx.keysteps = run_select_keysteps(run, net).schedule;
        }
        if (ctx.keysteps->T != run.steps)
            throw ConfigError("keysteps: schedule is for T = " + std::to_string(ctx.keysteps->T) + ", config has " +
                              std::to_string(run.steps));
    }

    const auto cond = sample_conditions(f.count, cfg.mixture.num_conditions(), f.condition);
    const std::uint64_t seed = cfg.seed;
    const fs::path csv = cfg.output_dir / "samples.csv";
    if (cond.empty()) {
        write_samples_csv(csv, Tensor(Shape{0, cfg.mixture.dim()}), cond, cfg.reward);
        std::cout << "wrote 0 samples to " << csv.string() << '\n';
        return;
    }
    Tensor x;
    if (f.strategy == "bon") {
        const SearchResult res = best_of_n(ctx.process, net, cond, run.reward, run.search, seed);
        x = res.samples;
        std::ofstream out(cfg.output_dir / "candidates.csv");
        out << "sample,candidate,reward,chosen\n";
        out.precision(17);
        for (std::size_t i = 0; i < res.rewards.size(); ++i)
            for (std::size_t j = 0; j < res.rewards[i].size(); ++j)
                out << i << ',' << j << ',' << res.rewards[i][j] << ',' << (res.chosen[i] == j ? 1 : 0) << '\n';
    } else if (f.strategy == "S" && !f.delta_log.empty()) {
        auto streams = trajectory_streams(seed, cond.size());
        const AlignedTrajectory traj =
            aligned_sample(ctx.process, net, *hnet, cond, streams, StrategySpec{Strategy::S, {}}, true);
        x = traj.samples;
        write_delta_log(f.delta_log, flatten_log(traj.log), cond);
    } else {
        x = run_method(ctx, hyper ? "hyper_" + f.strategy : f.strategy, cond, seed);
    }
    write_samples_csv(csv, x, cond, cfg.reward);
    std::cout << "wrote " << cond.size() << " samples to " << csv.string() << '\n';
}

void cmd_bench(const Globals& g) {
    const ExperimentConfig cfg = load(g);
    const BenchResult res = run_experiment(cfg);
    std::cout << format_summary(res.summary);
    std::cout << "metrics " << (cfg.output_dir / "metrics.csv").string() << " config_hash " << res.config_hash << '\n';
}

struct AnalyzeFlags {
    std::string mode, log, base, hypernet;
    std::size_t count = 128;
    std::size_t row = 0;
    std::vector<int> steps;
    std::size_t M = 0;
};

FlatDeltaLog analysis_log(const Globals& g, const AnalyzeFlags& f, std::vector<std::size_t>& cond) {
    if (!f.log.empty()) {
        if (!fs::exists(f.log)) throw std::invalid_argument("delta log: file not found: " + f.log);
        return read_delta_log(f.log, &cond);
    }
    const ExperimentConfig cfg = load(g);
    const fs::path base = pick(f.base, default_base(cfg));
    require_file(base, "base checkpoint");
    const DenoiserNet net = load_denoiser(base);
    const fs::path hp = pick(f.hypernet, default_hyper(cfg));
    require_file(hp, "hypernet checkpoint");
    const HyperNet hnet = load_hypernet(hp, net);
    cond = cycling_conditions(f.count, cfg.mixture.num_conditions());
    auto streams = trajectory_streams(cfg.seed, cond.size());
    const AlignedTrajectory traj =
        aligned_sample(cfg.process(), net, hnet, cond, streams, StrategySpec{Strategy::S, {}}, true);
    return flatten_log(traj.log);
}

void cmd_analyze(const Globals& g, const AnalyzeFlags& f) {
    if (f.mode == "keysteps") {
        const ExperimentConfig cfg = load(g);
        const fs::path base = pick(f.base, default_base(cfg));
        require_file(base, "base checkpoint");
        ExperimentConfig run = cfg;
        if (f.M > 0) run.keysteps.count = f.M;
        const KeystepSelection sel = run_select_keysteps(run, load_denoiser(base));
        write_keystep_report(cfg.output_dir, sel);
        std::cout << "keysteps " << join(sel.schedule.steps) << '\n';
        return;
    }
    std::vector<std::size_t> cond;
    const FlatDeltaLog log = analysis_log(g, f, cond);
    const fs::path dir = g.config.empty() ? out_dir(g) : load(g).output_dir;
    if (f.mode == "drift") {
        const LoraDriftReport rep = lora_drift(log, f.row);
        std::ofstream out(dir / "drift.csv");
        out << "step,cosine,l1_change\n";
        out.precision(17);
        Series cs{"cosine", {}, {}}, l1{"relative l1 change", {}, {}};
        for (std::size_t i = 0; i < rep.steps.size(); ++i) {
            out << rep.steps[i] << ',' << rep.cosine[i] << ',' << rep.l1_change[i] << '\n';
            cs.x.push_back(rep.steps[i]);
            cs.y.push_back(rep.cosine[i]);
            l1.x.push_back(rep.steps[i]);
            l1.y.push_back(rep.l1_change[i]);
        }
        svg_line_chart(dir / "drift.svg", "LoRA drift against the first step", "step", "value", {cs, l1});
        const std::vector<double> steps_d(cs.x.begin(), cs.x.end());
        if (rep.steps.size() >= 2)
            std::cout << "drift spearman(step, cosine) " << spearman(steps_d, rep.cosine) << '\n';
        std::cout << "wrote " << (dir / "drift.csv").string() << '\n';
    } else if (f.mode == "pca") {
        std::vector<int> steps = f.steps;
        if (steps.empty()) {
            // Five evenly spaced logged steps, first and last included.
            const std::size_t n = log.steps.size();
            for (std::size_t k = 0; k < std::min<std::size_t>(5, n); ++k)
                steps.push_back(log.steps[n == 1 ? 0 : k * (n - 1) / (std::min<std::size_t>(5, n) - 1)]);
        }
        const auto res = lora_pca(log, steps);
        std::ofstream out(dir / "pca.csv");
        out << "step,row,cond,pc1,pc2\n";
        out.precision(17);
        std::ofstream var(dir / "pca_variance.csv");
        var << "step,explained1,explained2,projected_variance\n";
        var.precision(17);
        std::vector<Series> series;
        for (const auto& s : res) {
            Series pts{"t=" + std::to_string(s.step), {}, {}};
            for (std::size_t i = 0; i < s.pca.coords.dim(0); ++i) {
                out << s.step << ',' << i << ',' << (i < cond.size() ? cond[i] : 0) << ',' << s.pca.coords.at(i, 0)
                    << ',' << s.pca.coords.at(i, 1) << '\n';
                pts.x.push_back(s.pca.coords.at(i, 0));
                pts.y.push_back(s.pca.coords.at(i, 1));
            }
            var << s.step << ',' << s.pca.explained[0] << ',' << s.pca.explained[1] << ',' << s.projected_variance
                << '\n';
            std::cout << "pca step " << s.step << " explained " << s.pca.explained[0] << ' ' << s.pca.explained[1]
                      << " projected_variance " << s.projected_variance << '\n';
            series.push_back(std::move(pts));
        }
        svg_scatter_chart(dir / "pca.svg", "LoRA deltas, top-2 principal components", "PC1", "PC2", series);
    } else {
        throw UsageError("--mode must be drift, pca or keysteps");
    }
}

void cmd_select_keysteps(const Globals& g, const std::string& base_flag, std::size_t M) {
    ExperimentConfig cfg = load(g);
    if (M > 0) cfg.keysteps.count = M;
    const fs::path base = pick(base_flag, default_base(cfg));
    require_file(base, "base checkpoint");
    const KeystepSelection sel = run_select_keysteps(cfg, load_denoiser(base));
    const fs::path sidecar = cfg.output_dir / "keysteps.json";
    write_keysteps(sidecar, sel.schedule);
    write_keystep_report(cfg.output_dir, sel);
    std::cout << "keysteps " << join(sel.schedule.steps) << " written to " << sidecar.string() << '\n';
}

std::string one_line(std::string s) {
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
}

int fail(const char* category, const std::string& what, int code = 1) {
    std::cerr << "error[" << category << "]: " << one_line(what) << '\n';
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Conditional diffusion alignment with hypernetwork-generated LoRA deltas"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config, "experiment config (JSON)");
    app.add_option("--seed", g.seed, "override the config seed");
    app.add_option("--out", g.out, "override the output directory");
    app.add_option("--threads", g.threads, "worker threads (default 1 for bitwise reproducibility)")
        ->check(CLI::PositiveNumber);
    app.fallthrough();

    auto* train = app.add_subcommand("train-base", "train the base denoiser");

    auto* align = app.add_subcommand("align", "train the hypernetwork against a frozen base");
    std::string align_base, align_loss;
    bool align_dump = false;
    align->add_option("--base", align_base, "base checkpoint (default <out>/base.ckpt)");
    align->add_option("--loss", align_loss, "reward | reg | both");
    align->add_flag("--dump-deltas", align_dump, "report the largest delta entry over a probe batch");

    auto* sample_cmd = app.add_subcommand("sample", "draw samples with one strategy");
    SampleFlags sf;
    sample_cmd->add_option("--base", sf.base, "base checkpoint");
    sample_cmd->add_option("--hypernet", sf.hypernet, "hypernet checkpoint");
    sample_cmd->add_option("--strategy", sf.strategy, "base | guided | bon | eps_greedy | S | I | P");
    sample_cmd->add_option("--count", sf.count, "number of samples")->required();
    sample_cmd->add_option("--condition", sf.condition, "fixed condition (default: cycle all)");
    sample_cmd->add_option("--keysteps", sf.keysteps, "keystep sidecar for strategy P");
    sample_cmd->add_flag("--select-keysteps", sf.select, "select keysteps on the fly for strategy P");
    sample_cmd->add_option("--n", sf.n, "Best-of-N candidates (default from config)");
    sample_cmd->add_option("--delta-log", sf.delta_log, "write the strategy-S delta log to this CSV");

    auto* bench = app.add_subcommand("bench", "run every configured method and score it");

    auto* analyze = app.add_subcommand("analyze", "LoRA drift, PCA or keystep analysis");
    AnalyzeFlags af;
    analyze->add_option("--mode", af.mode, "drift | pca | keysteps")->required();
    analyze->add_option("--log", af.log, "delta log CSV (otherwise generated from checkpoints)");
    analyze->add_option("--base", af.base, "base checkpoint");
    analyze->add_option("--hypernet", af.hypernet, "hypernet checkpoint");
    analyze->add_option("--count", af.count, "trajectories when generating a log");
    analyze->add_option("--row", af.row, "trajectory row for drift");
    analyze->add_option("--steps", af.steps, "steps for pca")->delimiter(',');
    analyze->add_option("-M", af.M, "keystep count override");

    auto* select = app.add_subcommand("select-keysteps", "select keysteps and write the sidecar");
    std::string select_base;
    std::size_t select_M = 0;
    select->add_option("--base", select_base, "base checkpoint");
    select->add_option("-M", select_M, "keystep count override");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("usage", e.what(), 2);
    }

    // Matrix products are the only multithreaded code path; with the default
    // of one thread every result is bitwise reproducible.
    Eigen::setNbThreads(g.threads);

    try {
        if (*train) cmd_train_base(g);
        else if (*align) cmd_align(g, align_base, align_loss, align_dump);
        else if (*sample_cmd) cmd_sample(g, sf);
        else if (*bench) cmd_bench(g);
        else if (*analyze) cmd_analyze(g, af);
        else if (*select) cmd_select_keysteps(g, select_base, select_M);
    } catch (const UsageError& e) {
        return fail("usage", e.what(), 2);
    } catch (const ConfigError& e) {
        return fail("config", e.what());
    } catch (const CheckpointError& e) {
        return fail("checkpoint", e.what());
    } catch (const std::invalid_argument& e) {
        return fail("input", e.what());
    } catch (const std::exception& e) {
        return fail("runtime", e.what());
    }
    return 0;
}
