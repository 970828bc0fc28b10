// SPDX-License-Identifier: Apache-2.0
#include "hyperalign/sampler.hpp"

#include <cmath>

namespace hyperalign {

namespace {

void require_finite(const Tensor& x, int step) {
    if (!x.all_finite()) {
        throw NonFiniteError(step, "non-finite state produced at step " + std::to_string(step));
    }
}

std::vector<double> repeat(double v, std::size_t n) { return std::vector<double>(n, v); }

}  // namespace

NonFiniteError::NonFiniteError(int step, const std::string& what) : std::runtime_error(what), step_(step) {}

std::vector<RngStream> trajectory_streams(std::uint64_t seed, std::size_t count, std::size_t offset) {
    const RngStream root(seed);
    std::vector<RngStream> s;
    s.reserve(count);
    for (std::size_t i = 0; i < count; ++i) s.push_back(root.fork(offset + i));
    return s;
}

Tensor draw_rows(std::span<RngStream> streams, std::size_t dim) {
    Tensor out(Shape{streams.size(), dim});
    for (std::size_t i = 0; i < streams.size(); ++i)
        for (std::size_t j = 0; j < dim; ++j) out.at(i, j) = streams[i].normal();
    return out;
}

Tensor score_from_epsilon(const Tensor& eps, double sigma) {
    Tensor s(eps.shape());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = -eps[i] / sigma;
    return s;
}

Tensor vp_sample_step(const DenoiserNet& net, const Tensor& x_t, int t, std::span<const std::size_t> cond,
                      const DiffusionSchedule& sched, std::span<RngStream> streams, const LoraDelta* delta,
                      const Tensor* score_shift) {
    if (net.config().parameterization != Parameterization::epsilon) {
        throw std::invalid_argument("vp_sample_step needs an epsilon-parameterized net");
    }
    const double beta = sched.beta_at(t);
    const std::size_t n = x_t.dim(0);
    if (streams.size() != n) throw ShapeError("vp_sample_step: one stream per trajectory required");
    const auto times = repeat(static_cast<double>(t) / static_cast<double>(sched.T), n);
    const Tensor eps = net.evaluate(x_t, times, cond, delta);
    require_finite(eps, t);
    Tensor score = score_from_epsilon(eps, sched.sigma_at(t));
    if (score_shift) {
        for (std::size_t i = 0; i < score.size(); ++i) score[i] += (*score_shift)[i];
    }
    const Tensor noise = t > 1 ? draw_rows(streams, x_t.dim(1)) : Tensor{};
    Tensor next = vp_update(x_t, score, noise, beta);
    require_finite(next, t);
    return next;
}

Tensor flow_sample_step(const DenoiserNet& net, const Tensor& x_t, double t, double dt,
                        std::span<const std::size_t> cond, const LoraDelta* delta, const Tensor* score_shift) {
    if (net.config().parameterization != Parameterization::velocity) {
        throw std::invalid_argument("flow_sample_step needs a velocity-parameterized net");
    }
    if (!(t > 0.0 && t <= 1.0) || dt == 0.0 || t + dt < -1e-12 || t + dt > 1.0 + 1e-12) {
        throw std::domain_error("flow_sample_step: need t in (0, 1] and t + dt in [0, 1]");
    }
    const std::size_t n = x_t.dim(0);
    const auto times = repeat(t, n);
    Tensor v = net.evaluate(x_t, times, cond, delta);
    const int step_id = static_cast<int>(std::lround(t * 1e6));
    require_finite(v, step_id);
    if (score_shift && t < 1.0) {
        // Shifting the score by g shifts v by -(t / (1 - t)) g.
        const double c = t / (1.0 - t);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] -= c * (*score_shift)[i];
    }
    Tensor next(x_t.shape());
    for (std::size_t i = 0; i < next.size(); ++i) next[i] = x_t[i] + dt * v[i];
    require_finite(next, step_id);
    return next;
}

Tensor sample_step(const Process& process, const DenoiserNet& net, const Tensor& x, int k,
                   std::span<const std::size_t> cond, std::span<RngStream> streams, const LoraDelta* delta,
                   const Tensor* score_shift) {
    if (process.paradigm() == Paradigm::vp) {
        return vp_sample_step(net, x, k, cond, process.vp_schedule(), streams, delta, score_shift);
    }
    const FlowSchedule& fs = process.flow_schedule();
    try {
        return flow_sample_step(net, x, fs.time(k), -fs.dt(), cond, delta, score_shift);
    } catch (const NonFiniteError&) {
        throw NonFiniteError(k, "non-finite state produced at step " + std::to_string(k));
    }
}

Var vp_predict_x0(const DenoiserNet& net, std::span<const Var> params, const Var& x, std::span<const int> steps,
                  const DiffusionSchedule& sched, std::span<const std::size_t> cond, const LoraVars* delta) {
    const std::size_t n = x.shape().at(0);
    if (steps.size() != n) throw ShapeError("vp_predict_x0: one step per row required");
    std::vector<double> times(n);
    Tensor sig(Shape{n, 1}), inv_sqrt_ab(Shape{n, 1});
    for (std::size_t i = 0; i < n; ++i) {
        times[i] = static_cast<double>(steps[i]) / static_cast<double>(sched.T);
        sig[i] = sched.sigma_at(steps[i]);
        inv_sqrt_ab[i] = 1.0 / std::sqrt(sched.alpha_bar_at(steps[i]));
    }
    Tape& tape = *x.tape();
    const Var eps = net.forward(params, x, times, cond, delta);
    return (x - tape.constant(std::move(sig)) * eps) * tape.constant(std::move(inv_sqrt_ab));
}

Var flow_predict_x0(const DenoiserNet& net, std::span<const Var> params, const Var& x, std::span<const double> times,
                    std::span<const std::size_t> cond, const LoraVars* delta) {
    const std::size_t n = x.shape().at(0);
    if (times.size() != n) throw ShapeError("flow_predict_x0: one time per row required");
    Tensor tcol(Shape{n, 1});
    for (std::size_t i = 0; i < n; ++i) tcol[i] = times[i];
    Tape& tape = *x.tape();
    const Var v = net.forward(params, x, times, cond, delta);
    return x - tape.constant(std::move(tcol)) * v;
}

Var predict_x0(const Process& process, const DenoiserNet& net, std::span<const Var> params, const Var& x, int k,
               std::span<const std::size_t> cond, const LoraVars* delta) {
    const std::size_t n = x.shape().at(0);
    if (process.paradigm() == Paradigm::vp) {
        const std::vector<int> steps(n, k);
        return vp_predict_x0(net, params, x, steps, process.vp_schedule(), cond, delta);
    }
    const std::vector<double> times(n, process.flow_schedule().time(k));
    return flow_predict_x0(net, params, x, times, cond, delta);
}

Tensor predict_x0(const Process& process, const DenoiserNet& net, const Tensor& x, int k,
                  std::span<const std::size_t> cond, const LoraDelta* delta) {
    Tape tape;
    const auto params = net.bind(tape, false);
    LoraVars dv;
    if (delta) {
        net.check_delta(*delta, x.dim(0));
        dv = as_constants(tape, *delta);
    }
    return predict_x0(process, net, params, tape.borrow(x), k, cond, delta ? &dv : nullptr).value();
}

Tensor initial_noise(const DenoiserNet& net, std::span<RngStream> streams) {
    return draw_rows(streams, net.config().data_dim);
}

Tensor run_chain(const Process& process, const DenoiserNet& net, Tensor x_init, std::span<const std::size_t> cond,
                 std::span<RngStream> streams, const DeltaSchedule& deltas, const StepObserver& observer) {
    Tensor x = std::move(x_init);
    for (int k = process.steps(); k >= 1; --k) {
        if (observer) observer(k, x);
        const LoraDelta* d = deltas ? deltas(k, x) : nullptr;
        x = sample_step(process, net, x, k, cond, streams, d);
    }
    return x;
}

Tensor sample(const Process& process, const DenoiserNet& net, std::span<const std::size_t> cond,
              std::span<RngStream> streams, const StepObserver& observer) {
    if (cond.size() != streams.size()) throw ShapeError("sample: one stream per condition entry required");
    return run_chain(process, net, initial_noise(net, streams), cond, streams, {}, observer);
}

}  // namespace hyperalign
