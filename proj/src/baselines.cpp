// SPDX-License-Identifier: Apache-2.0
#include "hyperalign/baselines.hpp"

#include <cmath>

namespace hyperalign {

namespace {

// Key of the proposal stream forked from a trajectory stream.
constexpr std::uint64_t kProposalKey = 0xE5C0FFEEull;

}  // namespace

const char* to_string(JacobianMode m) { return m == JacobianMode::full ? "full" : "stopgrad"; }

JacobianMode jacobian_mode_from_string(const std::string& s) {
    if (s == "full") return JacobianMode::full;
    if (s == "stopgrad") return JacobianMode::stopgrad;
    throw std::invalid_argument("unknown jacobian mode '" + s + "' (expected full or stopgrad)");
}

void GuidanceConfig::validate() const {
    if (!(scale >= 0.0) || !std::isfinite(scale)) throw std::invalid_argument("guidance: scale must be finite and >= 0");
}

void SearchBudget::validate() const {
    if (candidates < 1 || proposals < 1) throw std::invalid_argument("search budget: counts must be >= 1");
    if (!(perturbation_std >= 0.0)) throw std::invalid_argument("search budget: perturbation_std must be >= 0");
}

Tensor guidance_grad_vp(const DenoiserNet& net, const Tensor& x_t, int t, std::span<const std::size_t> cond,
                        const DiffusionSchedule& sched, const RewardSpec& spec, JacobianMode mode) {
    Tape tape;
    const auto params = net.bind(tape, false);
    const Var x = tape.param(x_t);
    const std::vector<int> steps(x_t.dim(0), t);
    Var x0;
    if (mode == JacobianMode::full) {
        x0 = vp_predict_x0(net, params, x, steps, sched, cond);
    } else {
        const std::vector<double> times(x_t.dim(0), static_cast<double>(t) / static_cast<double>(sched.T));
        const Var eps = ad::detach(net.forward(params, x, times, cond));
        x0 = (x - eps * sched.sigma_at(t)) * (1.0 / std::sqrt(sched.alpha_bar_at(t)));
    }
    const Var leaves[] = {x};
    return tape.gradient(ad::sum(reward_graph(x0, cond, spec)), leaves)[0];
}

Tensor guidance_grad_flow(const DenoiserNet& net, const Tensor& x_t, double t, std::span<const std::size_t> cond,
                          const RewardSpec& spec, JacobianMode mode) {
    if (!(t > 0.0 && t < 1.0)) throw std::domain_error("guidance_grad_flow: t must lie in (0, 1)");
    Tape tape;
    const auto params = net.bind(tape, false);
    const Var x = tape.param(x_t);
    const std::vector<double> times(x_t.dim(0), t);
    Var x0;
    if (mode == JacobianMode::full) {
        x0 = flow_predict_x0(net, params, x, times, cond);
    } else {
        x0 = x - ad::detach(net.forward(params, x, times, cond)) * t;
    }
    const Var leaves[] = {x};
    return tape.gradient(ad::sum(reward_graph(x0, cond, spec)), leaves)[0];
}

Tensor guidance_grad(const Process& process, const DenoiserNet& net, const Tensor& x, int k,
                     std::span<const std::size_t> cond, const RewardSpec& spec, JacobianMode mode) {
    if (process.paradigm() == Paradigm::vp) return guidance_grad_vp(net, x, k, cond, process.vp_schedule(), spec, mode);
    return guidance_grad_flow(net, x, process.flow_schedule().time(k), cond, spec, mode);
}

Tensor guided_sample(const Process& process, const DenoiserNet& net, std::span<const std::size_t> cond,
                     std::span<RngStream> streams, const GuidanceConfig& guidance, const RewardSpec& spec,
                     const StepObserver& observer) {
    guidance.validate();
    if (cond.size() != streams.size()) throw ShapeError("guided_sample: one stream per condition entry required");
    Tensor x = initial_noise(net, streams);
    const bool flow = process.paradigm() == Paradigm::flow;
    for (int k = process.steps(); k >= 1; --k) {
        if (observer) observer(k, x);
        const bool skip = guidance.scale == 0.0 || (flow && k == process.steps());
        if (skip) {
            x = sample_step(process, net, x, k, cond, streams);
            continue;
        }
        Tensor g = guidance_grad(process, net, x, k, cond, spec, guidance.jacobian);
        for (auto& v : g.values()) v *= guidance.scale;
        x = sample_step(process, net, x, k, cond, streams, nullptr, &g);
    }
    return x;
}

SearchResult best_of_n(const Process& process, const DenoiserNet& net, std::span<const std::size_t> cond,
                       const RewardSpec& spec, const SearchBudget& budget, std::uint64_t seed, std::size_t offset) {
    budget.validate();
    const std::size_t n = cond.size(), N = budget.candidates, d = net.config().data_dim;
    std::vector<std::size_t> all_cond(n * N);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < N; ++j) all_cond[i * N + j] = cond[i];
    auto streams = trajectory_streams(seed, n * N, offset * N);
    const Tensor cand = n == 0 ? Tensor(Shape{0, d}) : sample(process, net, all_cond, streams);
    const Tensor r = n == 0 ? Tensor(Shape{0}) : reward_batch(cand, all_cond, spec);
    SearchResult out;
    out.samples = Tensor(Shape{n, d});
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> ri(r.data() + i * N, r.data() + (i + 1) * N);
        std::size_t best = 0;
        for (std::size_t j = 1; j < N; ++j)
            if (ri[j] > ri[best]) best = j;
        for (std::size_t k = 0; k < d; ++k) out.samples.at(i, k) = cand.at(i * N + best, k);
        out.rewards.push_back(std::move(ri));
        out.chosen.push_back(best);
    }
    return out;
}

SearchResult eps_greedy(const Process& process, const DenoiserNet& net, std::span<const std::size_t> cond,
                        const RewardSpec& spec, const SearchBudget& budget, std::uint64_t seed, std::size_t offset) {
    budget.validate();
    const std::size_t n = cond.size(), k = budget.proposals, d = net.config().data_dim;
    auto streams = trajectory_streams(seed, n, offset);
    std::vector<RngStream> proposal_streams;
    for (const auto& s : streams) proposal_streams.push_back(s.fork(kProposalKey));
    Tensor incumbent_noise = n == 0 ? Tensor(Shape{0, d}) : initial_noise(net, streams);
    // `streams` now sit just after the initial draw; every candidate replays
    // its chain noise from this state.
    const auto run = [&](const Tensor& noise, std::span<const std::size_t> c, std::vector<RngStream> s) {
        return run_chain(process, net, noise, c, s);
    };
    SearchResult out;
    out.rewards.resize(n);
    out.incumbent.resize(n);
    if (n == 0) {
        out.samples = Tensor(Shape{0, d});
        return out;
    }
    Tensor incumbent = run(incumbent_noise, cond, streams);
    Tensor inc_reward = reward_batch(incumbent, cond, spec);
    for (std::size_t i = 0; i < n; ++i) out.rewards[i].push_back(inc_reward[i]);

    std::vector<std::size_t> cand_cond(n * k);
    std::vector<RngStream> cand_streams(n * k);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            cand_cond[i * k + j] = cond[i];
            cand_streams[i * k + j] = streams[i];
        }
    for (std::size_t it = 0; it < budget.iterations; ++it) {
        Tensor proposals(Shape{n * k, d});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < k; ++j)
                for (std::size_t m = 0; m < d; ++m)
                    proposals.at(i * k + j, m) =
                        incumbent_noise.at(i, m) + budget.perturbation_std * proposal_streams[i].normal();
        const Tensor cand = run(proposals, cand_cond, cand_streams);
        const Tensor r = reward_batch(cand, cand_cond, spec);
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            for (std::size_t j = 0; j < k; ++j) {
                out.rewards[i].push_back(r[i * k + j]);
                if (r[i * k + j] > r[i * k + best]) best = j;
            }
            if (r[i * k + best] > inc_reward[i]) {
                inc_reward[i] = r[i * k + best];
                for (std::size_t m = 0; m < d; ++m) {
                    incumbent_noise.at(i, m) = proposals.at(i * k + best, m);
                    incumbent.at(i, m) = cand.at(i * k + best, m);
                }
            }
            out.incumbent[i].push_back(inc_reward[i]);
        }
    }
    out.samples = std::move(incumbent);
    return out;
}

}  // namespace hyperalign
