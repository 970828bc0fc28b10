// SPDX-License-Identifier: Apache-2.0
// Oracles shared by the test binaries.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>

#include "hyperalign/diffusion.hpp"
#include "hyperalign/rng.hpp"
#include "hyperalign/tensor.hpp"

namespace hyperalign::testing {

/// Central differences of a scalar function, one coordinate at a time.
inline Tensor central_difference(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
    Tensor g(x.shape());
    Tensor p = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = p[i];
        p[i] = orig + h;
        const double up = f(p);
        p[i] = orig - h;
        const double down = f(p);
        p[i] = orig;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

/// ||a - b||_2 / max(||b||_2, floor).
inline double relative_error(const Tensor& a, const Tensor& b, double floor = 1e-12) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - b[i]) * (a[i] - b[i]);
        den += b[i] * b[i];
    }
    return std::sqrt(num) / std::max(std::sqrt(den), floor);
}

/// Sample mean and unbiased variance of a flat tensor.
struct Moments {
    double mean = 0.0;
    double var = 0.0;
};

inline Moments moments(std::span<const double> v) {
    Moments m;
    for (double x : v) m.mean += x;
    m.mean /= static_cast<double>(v.size());
    for (double x : v) m.var += (x - m.mean) * (x - m.mean);
    m.var /= static_cast<double>(v.size() - 1);
    return m;
}

/// 1-D Gaussian data N(m, s^2) and its closed-form marginals under both
/// paradigms.
struct GaussianData {
    double m = 1.0;
    double s = 0.5;

    /// VP marginal score at step t.
    double vp_score(double x, int t, const DiffusionSchedule& sched) const {
        const double ab = sched.alpha_bar_at(t);
        const double var = ab * s * s + (1.0 - ab);
        return -(x - std::sqrt(ab) * m) / var;
    }
    /// Rectified-flow marginal variance and its time derivative.
    double flow_var(double t) const { return (1.0 - t) * (1.0 - t) * s * s + t * t; }
    double flow_var_dot(double t) const { return -2.0 * (1.0 - t) * s * s + 2.0 * t; }
    double flow_score(double x, double t) const { return -(x - (1.0 - t) * m) / flow_var(t); }
    /// Velocity obtained by differentiating the Gaussian path
    /// x_t = (1 - t) m + sqrt(V(t)) z with respect to t.
    double path_velocity(double x, double t) const {
        return -m + flow_var_dot(t) / (2.0 * flow_var(t)) * (x - (1.0 - t) * m);
    }
};

/// Full VP reverse chain with the analytic score; one stream per trajectory.
inline Tensor vp_chain_analytic(const GaussianData& g, const DiffusionSchedule& sched, std::size_t n,
                                std::uint64_t seed) {
    Tensor x(Shape{n, 1});
    std::vector<RngStream> streams;
    const RngStream root(seed);
    for (std::size_t i = 0; i < n; ++i) {
        streams.push_back(root.fork(i));
        x[i] = streams[i].normal();
    }
    for (int t = sched.T; t >= 1; --t) {
        Tensor score(x.shape()), noise;
        for (std::size_t i = 0; i < n; ++i) score[i] = g.vp_score(x[i], t, sched);
        if (t > 1) {
            noise = Tensor(x.shape());
            for (std::size_t i = 0; i < n; ++i) noise[i] = streams[i].normal();
        }
        x = vp_update(x, score, noise, sched.beta_at(t));
    }
    return x;
}

/// Rectified-flow chain from t = 1 to 0 in N steps; the score-form update is
/// used for t < 1 and the t = 1 limit v = x - m for the first step.
inline Tensor flow_chain_analytic(const GaussianData& g, int N, std::size_t n, std::uint64_t seed) {
    Tensor x(Shape{n, 1});
    const RngStream root(seed);
    for (std::size_t i = 0; i < n; ++i) {
        RngStream s = root.fork(i);
        x[i] = s.normal();
    }
    const double dt = 1.0 / N;
    for (int k = N; k >= 1; --k) {
        const double t = static_cast<double>(k) / N;
        if (k == N) {
            for (std::size_t i = 0; i < n; ++i) x[i] -= dt * (x[i] - g.m);
            continue;
        }
        Tensor score(x.shape());
        for (std::size_t i = 0; i < n; ++i) score[i] = g.flow_score(x[i], t);
        x = flow_update(x, t, -dt, score);
    }
    return x;
}

}  // namespace hyperalign::testing
