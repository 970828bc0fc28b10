// SPDX-License-Identifier: Apache-2.0
#include "hyperalign/align.hpp"

#include <cmath>
#include <fstream>

#include "hyperalign/adam.hpp"

namespace hyperalign {

const char* to_string(LossMix m) {
    switch (m) {
        case LossMix::reward: return "reward";
        case LossMix::reg: return "reg";
        case LossMix::both: return "both";
    }
    return "?";
}

LossMix loss_mix_from_string(const std::string& s) {
    if (s == "reward") return LossMix::reward;
    if (s == "reg") return LossMix::reg;
    if (s == "both") return LossMix::both;
    throw std::invalid_argument("unknown loss mix '" + s + "' (expected reward, reg or both)");
}

void AlignTrainConfig::validate() const {
    if (iterations < 0) throw std::invalid_argument("align: iterations must be >= 0");
    if (batch_size == 0) throw std::invalid_argument("align: batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("align: learning_rate must be > 0");
    if (!(t_min > 0.0 && t_min <= t_max && t_max <= 1.0)) {
        throw std::invalid_argument("align: need 0 < t_min <= t_max <= 1");
    }
}

namespace {

// Steps of a VP process covered by the fraction range [lo, hi].
std::pair<int, int> step_range(int T, double lo, double hi) {
    const int a = std::max(1, static_cast<int>(std::ceil(lo * T)));
    const int b = std::min(T, static_cast<int>(std::floor(hi * T)));
    if (a > b) throw std::invalid_argument("align: t-range contains no step");
    return {a, b};
}

Var predict_with(const HyperNet& hnet, std::span<const Var> psi, const DenoiserNet& net, std::span<const Var> theta,
                 const Var& x, std::span<const double> times, std::span<const std::size_t> cond) {
    const LoraVars delta = hnet.forward(psi, x, times, cond);
    return net.forward(theta, x, times, cond, &delta);
}

}  // namespace

Var loss_reward(const HyperNet& hnet, std::span<const Var> psi, const DenoiserNet& net,
                std::span<const Var> theta, const ConditionedBatch& pool, const Process& process,
                const RewardSpec& spec, const AlignTrainConfig& config, RngStream& stream, double* mean_reward) {
    if (pool.size() == 0) throw std::invalid_argument("loss_reward: empty sample pool");
    const ConditionedBatch mb = draw_minibatch(pool, config.batch_size, stream);
    const std::size_t n = mb.size(), d = mb.x0.dim(1);
    Tape& tape = *psi.front().tape();
    std::vector<double> times(n);
    Tensor x_t(Shape{n, d});
    Var x0;
    if (process.paradigm() == Paradigm::vp) {
        const auto& s = process.vp_schedule();
        const auto [lo, hi] = step_range(s.T, config.t_min, config.t_max);
        std::vector<int> steps(n);
        for (auto& t : steps) t = lo + static_cast<int>(stream.index(static_cast<std::size_t>(hi - lo + 1)));
        const Tensor eps = stream.gaussian(Shape{n, d});
        Tensor sig(Shape{n, 1}), inv(Shape{n, 1});
        for (std::size_t i = 0; i < n; ++i) {
            times[i] = static_cast<double>(steps[i]) / s.T;
            const double a = std::sqrt(s.alpha_bar_at(steps[i]));
            sig[i] = s.sigma_at(steps[i]);
            inv[i] = 1.0 / a;
            for (std::size_t j = 0; j < d; ++j) x_t.at(i, j) = a * mb.x0.at(i, j) + sig[i] * eps.at(i, j);
        }
        const Var x = tape.constant(std::move(x_t));
        const Var e = predict_with(hnet, psi, net, theta, x, times, mb.cond);
        x0 = (x - tape.constant(std::move(sig)) * e) * tape.constant(std::move(inv));
    } else {
        for (auto& t : times) t = config.t_min + (config.t_max - config.t_min) * stream.uniform();
        const Tensor x1 = stream.gaussian(Shape{n, d});
        Tensor tcol(Shape{n, 1});
        for (std::size_t i = 0; i < n; ++i) {
            tcol[i] = times[i];
            for (std::size_t j = 0; j < d; ++j) x_t.at(i, j) = (1.0 - times[i]) * mb.x0.at(i, j) + times[i] * x1.at(i, j);
        }
        const Var x = tape.constant(std::move(x_t));
        const Var v = predict_with(hnet, psi, net, theta, x, times, mb.cond);
        x0 = x - tape.constant(std::move(tcol)) * v;
    }
    const Var r = ad::mean(reward_graph(x0, mb.cond, spec));
    if (mean_reward) *mean_reward = r.value().item();
    return -r;
}

Var loss_reg(const HyperNet& hnet, std::span<const Var> psi, const DenoiserNet& net, std::span<const Var> theta,
             const PreferenceSet& prefs, const Process& process, const AlignTrainConfig& config, RngStream& stream) {
    if (prefs.samples.size() == 0) throw std::invalid_argument("loss_reg: empty preference set");
    const int T = process.steps();
    if (prefs.eta.size() != static_cast<std::size_t>(T)) {
        throw std::invalid_argument("loss_reg: eta has " + std::to_string(prefs.eta.size()) + " entries, process has " +
                                    std::to_string(T) + " steps");
    }
    const ConditionedBatch mb = draw_minibatch(prefs.samples, config.batch_size, stream);
    const std::size_t n = mb.size(), d = mb.x0.dim(1);
    Tape& tape = *psi.front().tape();
    std::vector<double> times(n);
    Tensor x_t(Shape{n, d}), target(Shape{n, d}), weight(Shape{n, 1});
    if (process.paradigm() == Paradigm::vp) {
        const auto& s = process.vp_schedule();
        std::vector<int> steps(n);
        for (auto& t : steps) t = 1 + static_cast<int>(stream.index(static_cast<std::size_t>(T)));
        const Tensor eps = stream.gaussian(Shape{n, d});
        for (std::size_t i = 0; i < n; ++i) {
            times[i] = static_cast<double>(steps[i]) / T;
            const double a = std::sqrt(s.alpha_bar_at(steps[i])), sg = s.sigma_at(steps[i]);
            weight[i] = prefs.eta_at(steps[i]) / (sg * sg);
            for (std::size_t j = 0; j < d; ++j) {
                x_t.at(i, j) = a * mb.x0.at(i, j) + sg * eps.at(i, j);
                target.at(i, j) = eps.at(i, j);
            }
        }
    } else {
        const Tensor x1 = stream.gaussian(Shape{n, d});
        const double lo = 1.0 / T;
        for (std::size_t i = 0; i < n; ++i) {
            const double t = lo + (1.0 - lo) * stream.uniform();
            times[i] = t;
            const int k = std::clamp(static_cast<int>(std::ceil(t * T)), 1, T);
            weight[i] = prefs.eta_at(k) * (1.0 - t) * (1.0 - t) / (t * t);
            for (std::size_t j = 0; j < d; ++j) {
                x_t.at(i, j) = (1.0 - t) * mb.x0.at(i, j) + t * x1.at(i, j);
                target.at(i, j) = x1.at(i, j) - mb.x0.at(i, j);
            }
        }
    }
    const Var pred = predict_with(hnet, psi, net, theta, tape.constant(std::move(x_t)), times, mb.cond);
    const Var err = ad::sum_last(ad::square(pred - tape.constant(std::move(target))));
    return ad::mean(ad::reshape(tape.constant(std::move(weight)), Shape{n}) * err);
}

RngStream align_stream(std::uint64_t seed, long iter, int which) {
    return RngStream(seed).fork(static_cast<std::uint64_t>(iter)).fork(static_cast<std::uint64_t>(which));
}

AlignStep align_gradient(const HyperNet& hnet, const DenoiserNet& net, const ConditionedBatch& pool,
                         const PreferenceSet& prefs, const Process& process, const RewardSpec& spec,
                         const AlignTrainConfig& config, long iter) {
    Tape tape;
    const auto psi = hnet.bind(tape, true);
    const auto theta = net.bind(tape, false);
    AlignStep step;
    Var total;
    if (config.use_reward()) {
        RngStream s = align_stream(config.seed, iter, 0);
        const Var lr = loss_reward(hnet, psi, net, theta, pool, process, spec, config, s, &step.mean_reward);
        step.reward_loss = lr.value().item();
        total = lr;
    }
    if (config.use_reg()) {
        RngStream s = align_stream(config.seed, iter, 1);
        const Var lg = loss_reg(hnet, psi, net, theta, prefs, process, config, s);
        step.reg_loss = lg.value().item();
        total = total.valid() ? total + lg : lg;
    }
    step.grads = tape.gradient(total, psi);
    return step;
}

void AlignCurves::write_csv(const std::filesystem::path& path, LossMix mix) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    const bool r = mix != LossMix::reg, g = mix != LossMix::reward;
    out << "iter";
    if (r) out << ",L_R";
    if (g) out << ",L_G";
    if (r) out << ",mean_reward";
    out << '\n';
    out.precision(17);
    for (std::size_t i = 0; i < ema.size(); ++i) {
        out << i;
        if (r) out << ',' << reward_loss[i];
        if (g) out << ',' << reg_loss[i];
        if (r) out << ',' << mean_reward[i];
        out << '\n';
    }
}

AlignResult train_hyper(HyperNet hnet, const DenoiserNet& net, const ConditionedBatch& pool,
                        const PreferenceSet& prefs, const Process& process, const RewardSpec& spec,
                        const AlignTrainConfig& config) {
    config.validate();
    spec.validate();
    if (config.use_reg()) prefs.validate(spec.num_conditions());
    AlignResult result;
    Adam opt(hnet.parameters(), AdamConfig{config.learning_rate});
    LossMonitor monitor(config.ema_decay);
    for (long it = 0; it < config.iterations; ++it) {
        const AlignStep step = align_gradient(hnet, net, pool, prefs, process, spec, config, it);
        opt.step(step.grads);
        result.curves.reward_loss.push_back(step.reward_loss);
        result.curves.reg_loss.push_back(step.reg_loss);
        result.curves.mean_reward.push_back(step.mean_reward);
        result.curves.ema.push_back(monitor.push(step.reward_loss + step.reg_loss, it));
    }
    result.hnet = std::move(hnet);
    return result;
}

ConditionedBatch base_sample_pool(const Process& process, const DenoiserNet& net, std::size_t per,
                                  std::uint64_t seed) {
    const std::size_t K = net.config().num_conditions;
    ConditionedBatch pool;
    for (std::size_t i = 0; i < per * K; ++i) pool.cond.push_back(i % K);
    auto streams = trajectory_streams(seed, pool.cond.size());
    pool.x0 = sample(process, net, pool.cond, streams);
    return pool;
}

}  // namespace hyperalign
