// SPDX-License-Identifier: Apache-2.0
//
// Noise schedules and the closed-form pieces of both generative paradigms:
// discrete variance-preserving diffusion and rectified flow.
#pragma once

#include <span>
#include <string>
#include <vector>

#include "hyperalign/tensor.hpp"

namespace hyperalign {

/// Discrete VP schedule. Index t runs over 1..T; storage is zero-based.
struct DiffusionSchedule {
    int T = 0;
    std::vector<double> beta;
    std::vector<double> alpha_bar;
    std::vector<double> sigma;

    double beta_at(int t) const { return beta.at(checked(t)); }
    double alpha_bar_at(int t) const { return alpha_bar.at(checked(t)); }
    double sigma_at(int t) const { return sigma.at(checked(t)); }

private:
    std::size_t checked(int t) const;
};

/// Linear beta ramp from beta_min (t = 1) to beta_max (t = T).
DiffusionSchedule make_vp_schedule(int T, double beta_min, double beta_max);

/// Rectified-flow grid t_k = k / N. t is the noise fraction: t = 1 is pure
/// noise and samplers integrate from t = 1 toward t = 0.
struct FlowSchedule {
    int N = 0;

    double time(int k) const { return static_cast<double>(k) / static_cast<double>(N); }
    double dt() const { return 1.0 / static_cast<double>(N); }
    static double alpha(double t) { return 1.0 - t; }
    static double beta(double t) { return t; }
};

FlowSchedule make_flow_schedule(int N);

enum class Paradigm { vp, flow };

const char* to_string(Paradigm p);
Paradigm paradigm_from_string(const std::string& s);

/// One of the two sampling processes, addressed by a step index k that runs
/// from steps() down to 1 in both paradigms.
class Process {
public:
    static Process vp(DiffusionSchedule schedule);
    static Process flow(FlowSchedule schedule);

    Paradigm paradigm() const { return paradigm_; }
    int steps() const { return paradigm_ == Paradigm::vp ? vp_.T : flow_.N; }
    /// Normalized time in [0, 1] fed to networks at step k.
    double model_time(int k) const;
    const DiffusionSchedule& vp_schedule() const { return vp_; }
    const FlowSchedule& flow_schedule() const { return flow_; }

private:
    Paradigm paradigm_ = Paradigm::vp;
    DiffusionSchedule vp_;
    FlowSchedule flow_;
};

/// sqrt(alpha_bar_t) * x0 + sigma_t * eps.
Tensor forward_noise(const Tensor& x0, int t, const DiffusionSchedule& sched, const Tensor& eps);

/// (1 - t) * x0 + t * x1.
Tensor flow_interpolate(const Tensor& x0, double t, const Tensor& x1);

/// Velocity from score on the rectified-flow path (alpha = 1 - t, beta = t):
/// v = (alpha'/alpha) x - (beta beta' - alpha' beta^2 / alpha) score.
Tensor velocity_score_convert(const Tensor& x, double t, const Tensor& score);
/// Inverse of velocity_score_convert; needs t in (0, 1).
Tensor score_from_velocity(const Tensor& x, double t, const Tensor& velocity);

/// Score-form rectified-flow update
/// x_{t+dt} = (1 - dt/(1-t)) x - (t dt/(1-t)) score, for t in [0, 1).
/// dt may be negative (integration toward data).
Tensor flow_update(const Tensor& x, double t, double dt, const Tensor& score);

/// VP transition (1 + beta/2) x + beta * score + sqrt(beta) * noise; the noise
/// term is omitted when `noise` is empty.
Tensor vp_update(const Tensor& x, const Tensor& score, const Tensor& noise, double beta);

}  // namespace hyperalign
