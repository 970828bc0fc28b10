// SPDX-License-Identifier: Apache-2.0
#include "hyperalign/reward.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace hyperalign {

namespace {

// exp overflows for arguments above log(DBL_MAX).
constexpr double kMaxExpArgument = 709.78;

void check_condition(std::size_t c, const RewardSpec& spec) {
    if (c >= spec.num_conditions()) {
        throw std::out_of_range("reward: condition id " + std::to_string(c) + " outside [0, " +
                                std::to_string(spec.num_conditions()) + ")");
    }
}

double norm(std::span<const double> x) {
    double s = 0.0;
    for (double v : x) s += v * v;
    return std::sqrt(s);
}

}  // namespace

const char* to_string(RewardFamily f) {
    switch (f) {
        case RewardFamily::mode_pull: return "mode_pull";
        case RewardFamily::annulus: return "annulus";
        case RewardFamily::composite: return "composite";
    }
    return "?";
}

RewardFamily reward_family_from_string(const std::string& s) {
    if (s == "mode_pull") return RewardFamily::mode_pull;
    if (s == "annulus") return RewardFamily::annulus;
    if (s == "composite") return RewardFamily::composite;
    throw std::invalid_argument("unknown reward family '" + s + "' (expected mode_pull, annulus or composite)");
}

void RewardSpec::validate() const {
    if (!(gamma > 0.0)) throw std::invalid_argument("reward: gamma must be > 0");
    if (targets.rank() != 2 || targets.size() == 0) throw std::invalid_argument("reward: targets must be (K, d)");
    if (!targets.all_finite() || !std::isfinite(radius) || !std::isfinite(pull_weight) ||
        !std::isfinite(annulus_weight)) {
        throw std::invalid_argument("reward: parameters must be finite");
    }
    if (radius < 0.0) throw std::invalid_argument("reward: radius must be >= 0");
}

double RewardSpec::max_reward() const {
    if (family == RewardFamily::composite && (pull_weight < 0.0 || annulus_weight < 0.0)) return INFINITY;
    return 0.0;
}

RewardSpec default_reward(const MixtureSpec& mixture) {
    RewardSpec r;
    r.targets = mixture.modes;
    for (auto& v : r.targets.values()) v *= 0.5;
    return r;
}

double reward_eval(std::span<const double> x, std::size_t c, const RewardSpec& spec) {
    check_condition(c, spec);
    const std::size_t d = spec.dim();
    if (x.size() != d) throw ShapeError("reward: point dimension " + std::to_string(x.size()) + " != " + std::to_string(d));
    double pull = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        const double u = x[j] - spec.targets.at(c, j);
        pull -= u * u;
    }
    const double ring = -(norm(x) - spec.radius) * (norm(x) - spec.radius);
    switch (spec.family) {
        case RewardFamily::mode_pull: return pull;
        case RewardFamily::annulus: return ring;
        case RewardFamily::composite: return spec.pull_weight * pull + spec.annulus_weight * ring;
    }
    return 0.0;
}

std::vector<double> reward_grad(std::span<const double> x, std::size_t c, const RewardSpec& spec) {
    check_condition(c, spec);
    const std::size_t d = spec.dim();
    if (x.size() != d) throw ShapeError("reward_grad: point dimension mismatch");
    std::vector<double> pull(d), ring(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) pull[j] = -2.0 * (x[j] - spec.targets.at(c, j));
    const double r = norm(x);
    if (r > 0.0) {
        for (std::size_t j = 0; j < d; ++j) ring[j] = -2.0 * (r - spec.radius) * x[j] / r;
    }
    switch (spec.family) {
        case RewardFamily::mode_pull: return pull;
        case RewardFamily::annulus: return ring;
        case RewardFamily::composite:
            for (std::size_t j = 0; j < d; ++j) pull[j] = spec.pull_weight * pull[j] + spec.annulus_weight * ring[j];
            return pull;
    }
    return pull;
}

Tensor reward_batch(const Tensor& x, std::span<const std::size_t> cond, const RewardSpec& spec) {
    if (x.rank() != 2 || x.dim(0) != cond.size()) throw ShapeError("reward_batch: x must be (n, d) with n = |cond|");
    const std::size_t d = x.dim(1);
    Tensor out(Shape{cond.size()});
    for (std::size_t i = 0; i < cond.size(); ++i) out[i] = reward_eval({x.data() + i * d, d}, cond[i], spec);
    return out;
}

Tensor reward_grad_batch(const Tensor& x, std::span<const std::size_t> cond, const RewardSpec& spec) {
    if (x.rank() != 2 || x.dim(0) != cond.size()) throw ShapeError("reward_grad_batch: x must be (n, d)");
    const std::size_t d = x.dim(1);
    Tensor out(x.shape());
    for (std::size_t i = 0; i < cond.size(); ++i) {
        const auto g = reward_grad({x.data() + i * d, d}, cond[i], spec);
        std::copy(g.begin(), g.end(), out.data() + i * d);
    }
    return out;
}

Var reward_graph(const Var& x, std::span<const std::size_t> cond, const RewardSpec& spec) {
    const std::size_t n = x.shape().at(0), d = spec.dim();
    if (x.shape().size() != 2 || x.shape()[1] != d || cond.size() != n) {
        throw ShapeError("reward_graph: x " + shape_str(x.shape()) + " does not match conditions/targets");
    }
    Tape& tape = *x.tape();
    Tensor tgt(Shape{n, d});
    for (std::size_t i = 0; i < n; ++i) {
        check_condition(cond[i], spec);
        for (std::size_t j = 0; j < d; ++j) tgt.at(i, j) = spec.targets.at(cond[i], j);
    }
    const auto pull = [&] { return -ad::sum_last(ad::square(x - tape.constant(std::move(tgt)))); };
    const auto ring = [&] { return -ad::square(ad::add_scalar(ad::sqrt(ad::sum_last(ad::square(x))), -spec.radius)); };
    switch (spec.family) {
        case RewardFamily::mode_pull: return pull();
        case RewardFamily::annulus: return ring();
        case RewardFamily::composite: return pull() * spec.pull_weight + ring() * spec.annulus_weight;
    }
    return pull();
}

long GridSpec::cell_of(double x, double y) const {
    if (!contains(x, y)) return -1;
    const auto idx = [&](double v) {
        return std::min(resolution - 1, static_cast<std::size_t>((v - lo) / cell_width()));
    };
    return static_cast<long>(idx(x) * resolution + idx(y));
}

void GridSpec::validate() const {
    if (!(hi > lo) || resolution < 2) throw std::invalid_argument("grid: need hi > lo and resolution >= 2");
}

TiltOverflowError::TiltOverflowError(double max_ratio)
    : std::overflow_error([&] {
          std::ostringstream os;
          os << "tilted target: max R/gamma = " << max_ratio << " overflows exp; increase gamma";
          return os.str();
      }()),
      max_ratio_(max_ratio) {}

double TiltedTargetGrid::density(std::size_t c, std::size_t i, std::size_t j) const {
    return mass.at(c).at(i * grid.resolution + j) / grid.cell_area();
}

std::vector<double> TiltedTargetGrid::mean(std::size_t c) const {
    std::vector<double> m(2, 0.0);
    const auto& w = mass.at(c);
    for (std::size_t i = 0; i < grid.resolution; ++i)
        for (std::size_t j = 0; j < grid.resolution; ++j) {
            const double p = w[i * grid.resolution + j];
            m[0] += p * grid.center(i);
            m[1] += p * grid.center(j);
        }
    return m;
}

double TiltedTargetGrid::mean_reward(std::size_t c, const RewardSpec& spec) const {
    const auto& w = mass.at(c);
    double acc = 0.0;
    for (std::size_t i = 0; i < grid.resolution; ++i)
        for (std::size_t j = 0; j < grid.resolution; ++j) {
            const double p[2] = {grid.center(i), grid.center(j)};
            acc += w[i * grid.resolution + j] * reward_eval(p, c, spec);
        }
    return acc;
}

Tensor TiltedTargetGrid::sample(std::size_t c, std::size_t n, RngStream& stream) const {
    const auto& w = mass.at(c);
    std::vector<double> cdf(w.size());
    std::partial_sum(w.begin(), w.end(), cdf.begin());
    Tensor out(Shape{n, 2});
    const double h = grid.cell_width();
    for (std::size_t k = 0; k < n; ++k) {
        const double u = stream.uniform() * cdf.back();
        const std::size_t cell =
            std::min<std::size_t>(w.size() - 1, std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
        const std::size_t i = cell / grid.resolution, j = cell % grid.resolution;
        out.at(k, 0) = grid.lo + (static_cast<double>(i) + stream.uniform()) * h;
        out.at(k, 1) = grid.lo + (static_cast<double>(j) + stream.uniform()) * h;
    }
    return out;
}

void TiltedTargetGrid::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "cond,x,y,density\n";
    out.precision(12);
    for (std::size_t c = 0; c < num_conditions(); ++c)
        for (std::size_t i = 0; i < grid.resolution; ++i)
            for (std::size_t j = 0; j < grid.resolution; ++j)
                out << c << ',' << grid.center(i) << ',' << grid.center(j) << ',' << density(c, i, j) << '\n';
}

TiltedTargetGrid tilted_target(const GridDensity& base, std::size_t num_conditions, const RewardSpec* spec,
                               const GridSpec& grid) {
    grid.validate();
    if (spec) {
        spec->validate();
        if (spec->dim() != 2) throw std::invalid_argument("tilted_target: grid oracle is 2-D only");
    }
    TiltedTargetGrid out;
    out.grid = grid;
    const std::size_t res = grid.resolution;
    const double area = grid.cell_area();
    for (std::size_t c = 0; c < num_conditions; ++c) {
        std::vector<double> base_mass(res * res), ratio(res * res, 0.0);
        double base_total = 0.0, max_ratio = -INFINITY;
        for (std::size_t i = 0; i < res; ++i)
            for (std::size_t j = 0; j < res; ++j) {
                const double x = grid.center(i), y = grid.center(j);
                const double b = base(c, x, y);
                if (!(b >= 0.0) || !std::isfinite(b)) throw std::invalid_argument("tilted_target: base density must be finite and >= 0");
                base_mass[i * res + j] = b * area;
                base_total += b * area;
                if (spec) {
                    const double p[2] = {x, y};
                    ratio[i * res + j] = reward_eval(p, c, *spec) / spec->gamma;
                    max_ratio = std::max(max_ratio, ratio[i * res + j]);
                }
            }
        if (base_total < 0.999) {
            std::ostringstream os;
            os << "tilted_target: grid holds only " << base_total << " of condition " << c
               << "'s base mass (need >= 0.999)";
            throw std::invalid_argument(os.str());
        }
        if (spec && max_ratio > kMaxExpArgument) throw TiltOverflowError(max_ratio);
        std::vector<double> w(res * res);
        double z = 0.0;
        for (std::size_t k = 0; k < w.size(); ++k) {
            w[k] = base_mass[k] * std::exp(ratio[k]);
            z += w[k];
        }
        if (!(z > 0.0)) throw std::invalid_argument("tilted_target: tilted mass vanishes on the grid");
        for (auto& v : w) v /= z;
        out.mass.push_back(std::move(w));
        out.normalizer.push_back(z);
    }
    return out;
}

GridDensity mixture_density(const MixtureSpec& mixture) {
    return [mixture](std::size_t c, double x, double y) {
        const double p[2] = {x, y};
        return mixture.density(c, p);
    };
}

void PreferenceSet::validate(std::size_t num_conditions) const {
    for (double e : eta)
        if (!(e >= 0.0)) throw std::invalid_argument("preference set: eta must be >= 0");
    std::vector<std::size_t> count(num_conditions, 0);
    for (auto c : samples.cond) {
        if (c >= num_conditions) throw std::out_of_range("preference set: condition id out of range");
        ++count[c];
    }
    for (std::size_t c = 0; c < num_conditions; ++c)
        if (count[c] == 0) throw std::invalid_argument("preference set: no samples for condition " + std::to_string(c));
}

PreferenceSet gen_preference_set(const PointSampler& base, const RewardSpec& spec, const GridSpec& grid,
                                 std::size_t per_condition, std::size_t budget, std::vector<double> eta,
                                 RngStream& stream) {
    spec.validate();
    if (budget < per_condition) throw std::invalid_argument("gen_preference_set: budget below requested sample count");
    const std::size_t K = spec.num_conditions(), d = spec.dim();
    const double r_max = spec.max_reward();
    if (!std::isfinite(r_max)) throw std::invalid_argument("gen_preference_set: reward must be bounded above (negative composite weight)");
    PreferenceSet out;
    out.eta = std::move(eta);
    std::vector<double> values;
    for (std::size_t c = 0; c < K; ++c) {
        RngStream s = stream.fork(c);
        std::size_t drawn = 0, accepted = 0;
        while (accepted < per_condition) {
            if (drawn == budget) {
                throw AcceptanceError("gen_preference_set: budget of " + std::to_string(budget) +
                                      " draws exhausted for condition " + std::to_string(c) + " after " +
                                      std::to_string(accepted) + " acceptances; increase the budget or gamma");
            }
            const auto x = base(c, s);
            ++drawn;
            const double u = s.uniform();
            if (x.size() != d) throw ShapeError("gen_preference_set: base sampler returned the wrong dimension");
            if (d == 2 && !grid.contains(x[0], x[1])) continue;
            if (u < std::exp((reward_eval(x, c, spec) - r_max) / spec.gamma)) {
                values.insert(values.end(), x.begin(), x.end());
                out.samples.cond.push_back(c);
                ++accepted;
            }
            if (drawn >= 10000 && static_cast<double>(accepted) < 1e-3 * static_cast<double>(drawn)) {
                std::ostringstream os;
                os << "gen_preference_set: acceptance rate " << static_cast<double>(accepted) / static_cast<double>(drawn)
                   << " below 1e-3 for condition " << c << "; increase gamma";
                throw AcceptanceError(os.str());
            }
        }
    }
    out.samples.x0 = Tensor(Shape{out.samples.cond.size(), d}, std::move(values));
    return out;
}

}  // namespace hyperalign
