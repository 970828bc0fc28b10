// SPDX-License-Identifier: Apache-2.0
#include "hyperalign/diffusion.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace hyperalign {

std::size_t DiffusionSchedule::checked(int t) const {
    if (t < 1 || t > T) {
        throw std::out_of_range("step " + std::to_string(t) + " outside [1, " + std::to_string(T) + "]");
    }
    return static_cast<std::size_t>(t - 1);
}

DiffusionSchedule make_vp_schedule(int T, double beta_min, double beta_max) {
    if (T < 2) throw std::invalid_argument("make_vp_schedule: T must be >= 2, got " + std::to_string(T));
    if (!(beta_min > 0.0 && beta_min < beta_max && beta_max < 1.0)) {
        throw std::invalid_argument("make_vp_schedule: need 0 < beta_min < beta_max < 1, got " +
                                    std::to_string(beta_min) + ", " + std::to_string(beta_max));
    }
    DiffusionSchedule s;
    s.T = T;
    s.beta.resize(static_cast<std::size_t>(T));
    s.alpha_bar.resize(s.beta.size());
    s.sigma.resize(s.beta.size());
    double prod = 1.0;
    for (int i = 0; i < T; ++i) {
        const double b = beta_min + (beta_max - beta_min) * static_cast<double>(i) / static_cast<double>(T - 1);
        prod *= 1.0 - b;
        s.beta[static_cast<std::size_t>(i)] = b;
        s.alpha_bar[static_cast<std::size_t>(i)] = prod;
        s.sigma[static_cast<std::size_t>(i)] = std::sqrt(1.0 - prod);
    }
    return s;
}

FlowSchedule make_flow_schedule(int N) {
    if (N < 1) throw std::invalid_argument("make_flow_schedule: N must be >= 1");
    return FlowSchedule{N};
}

const char* to_string(Paradigm p) { return p == Paradigm::vp ? "vp" : "flow"; }

Paradigm paradigm_from_string(const std::string& s) {
    if (s == "vp") return Paradigm::vp;
    if (s == "flow") return Paradigm::flow;
    throw std::invalid_argument("unknown paradigm '" + s + "' (expected vp or flow)");
}

Process Process::vp(DiffusionSchedule schedule) {
    Process p;
    p.paradigm_ = Paradigm::vp;
    p.vp_ = std::move(schedule);
    return p;
}

Process Process::flow(FlowSchedule schedule) {
    Process p;
    p.paradigm_ = Paradigm::flow;
    p.flow_ = schedule;
    return p;
}

double Process::model_time(int k) const {
    if (k < 1 || k > steps()) throw std::out_of_range("step " + std::to_string(k) + " outside process range");
    return static_cast<double>(k) / static_cast<double>(steps());
}

Tensor forward_noise(const Tensor& x0, int t, const DiffusionSchedule& sched, const Tensor& eps) {
    if (x0.shape() != eps.shape()) {
        throw ShapeError("forward_noise: x0 " + shape_str(x0.shape()) + " vs eps " + shape_str(eps.shape()));
    }
    const double a = std::sqrt(sched.alpha_bar_at(t));
    const double s = sched.sigma_at(t);
    Tensor out(x0.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + s * eps[i];
    return out;
}

Tensor flow_interpolate(const Tensor& x0, double t, const Tensor& x1) {
    if (x0.shape() != x1.shape()) throw ShapeError("flow_interpolate: shape mismatch");
    Tensor out(x0.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - t) * x0[i] + t * x1[i];
    return out;
}

Tensor velocity_score_convert(const Tensor& x, double t, const Tensor& score) {
    if (!(t >= 0.0 && t < 1.0)) throw std::domain_error("velocity_score_convert: t must lie in [0, 1)");
    if (x.shape() != score.shape()) throw ShapeError("velocity_score_convert: shape mismatch");
    const double alpha = 1.0 - t, beta = t, alpha_dot = -1.0, beta_dot = 1.0;
    const double cx = alpha_dot / alpha;
    const double cs = beta * beta_dot - alpha_dot * beta * beta / alpha;
    Tensor v(x.shape());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = cx * x[i] - cs * score[i];
    return v;
}

Tensor score_from_velocity(const Tensor& x, double t, const Tensor& velocity) {
    if (!(t > 0.0 && t < 1.0)) throw std::domain_error("score_from_velocity: t must lie in (0, 1)");
    if (x.shape() != velocity.shape()) throw ShapeError("score_from_velocity: shape mismatch");
    // v = -(x + t s) / (1 - t)  =>  s = -(x + (1 - t) v) / t
    Tensor s(x.shape());
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = -(x[i] + (1.0 - t) * velocity[i]) / t;
    return s;
}

Tensor flow_update(const Tensor& x, double t, double dt, const Tensor& score) {
    if (!(t >= 0.0 && t < 1.0)) throw std::domain_error("flow_update: t = 1 is singular; t must lie in [0, 1)");
    if (x.shape() != score.shape()) throw ShapeError("flow_update: shape mismatch");
    const double cx = 1.0 - dt / (1.0 - t);
    const double cs = t * dt / (1.0 - t);
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = cx * x[i] - cs * score[i];
    return out;
}

Tensor vp_update(const Tensor& x, const Tensor& score, const Tensor& noise, double beta) {
    if (x.shape() != score.shape()) throw ShapeError("vp_update: x/score shape mismatch");
    const bool noisy = noise.size() != 0;
    if (noisy && noise.shape() != x.shape()) throw ShapeError("vp_update: noise shape mismatch");
    const double drift = 1.0 + 0.5 * beta;
    const double diffusion = std::sqrt(beta);
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = drift * x[i] + beta * score[i];
        if (noisy) out[i] += diffusion * noise[i];
    }
    return out;
}

}  // namespace hyperalign
