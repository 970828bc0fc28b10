// SPDX-License-Identifier: Apache-2.0
#include "hyperalign/training.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "hyperalign/adam.hpp"
#include "hyperalign/sampler.hpp"

namespace hyperalign {

void ConditionedBatch::validate(std::size_t dim) const {
    if (x0.rank() != 2 || x0.dim(0) != cond.size() || x0.dim(1) != dim) {
        throw ShapeError("batch x0 " + shape_str(x0.shape()) + " does not match " + std::to_string(cond.size()) +
                         " rows of dimension " + std::to_string(dim));
    }
}

ConditionedBatch ConditionedBatch::with_condition(std::size_t c) const {
    ConditionedBatch out;
    std::vector<double> values;
    const std::size_t d = x0.dim(1);
    for (std::size_t i = 0; i < cond.size(); ++i) {
        if (cond[i] != c) continue;
        out.cond.push_back(c);
        values.insert(values.end(), x0.data() + i * d, x0.data() + (i + 1) * d);
    }
    out.x0 = Tensor(Shape{out.cond.size(), d}, std::move(values));
    return out;
}

double MixtureSpec::density(std::size_t c, std::span<const double> x) const {
    const std::size_t d = dim();
    double r2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        const double u = x[j] - modes.at(c, j);
        r2 += u * u;
    }
    const double var = std * std;
    return std::exp(-0.5 * r2 / var) / std::pow(2.0 * std::numbers::pi * var, 0.5 * static_cast<double>(d));
}

MixtureSpec default_mixture() {
    return MixtureSpec{Tensor::from_rows({{2.0, 2.0}, {-2.0, 2.0}, {-2.0, -2.0}, {2.0, -2.0}}), 0.3};
}

Tensor sample_mixture_component(const MixtureSpec& spec, std::size_t c, std::size_t n, RngStream& stream) {
    const std::size_t d = spec.dim();
    Tensor out(Shape{n, d});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) out.at(i, j) = spec.modes.at(c, j) + spec.std * stream.normal();
    return out;
}

ConditionedBatch make_mixture_dataset(const MixtureSpec& spec, std::size_t n, RngStream& stream) {
    const std::size_t d = spec.dim(), K = spec.num_conditions();
    ConditionedBatch b;
    b.x0 = Tensor(Shape{n, d});
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = i % K;
        b.cond.push_back(c);
        for (std::size_t j = 0; j < d; ++j) b.x0.at(i, j) = spec.modes.at(c, j) + spec.std * stream.normal();
    }
    return b;
}

ConditionedBatch read_dataset_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open dataset " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path.string() + ": empty dataset file");
    std::size_t cols = 1;
    for (char ch : line) cols += ch == ',';
    if (cols < 2) throw std::runtime_error(path.string() + ": header needs x1..xd,cond");
    const std::size_t d = cols - 1;
    ConditionedBatch b;
    std::vector<double> values;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::size_t k = 0;
        while (std::getline(ss, cell, ',')) {
            try {
                if (k < d) {
                    values.push_back(std::stod(cell));
                } else if (k == d) {
                    b.cond.push_back(static_cast<std::size_t>(std::stoul(cell)));
                }
            } catch (const std::exception&) {
                throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": malformed value '" + cell + "'");
            }
            ++k;
        }
        if (k != cols) {
            throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected " +
                                     std::to_string(cols) + " columns");
        }
    }
    b.x0 = Tensor(Shape{b.cond.size(), d}, std::move(values));
    return b;
}

void write_dataset_csv(const std::filesystem::path& path, const ConditionedBatch& data) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    const std::size_t d = data.x0.dim(1);
    for (std::size_t j = 0; j < d; ++j) out << 'x' << (j + 1) << ',';
    out << "cond\n";
    out.precision(17);
    for (std::size_t i = 0; i < data.size(); ++i) {
        for (std::size_t j = 0; j < d; ++j) out << data.x0.at(i, j) << ',';
        out << data.cond[i] << '\n';
    }
}

namespace {

struct NoisedBatch {
    std::vector<int> steps;
    Tensor eps;
    Tensor x_t;
};

NoisedBatch noise_batch(const ConditionedBatch& batch, const DiffusionSchedule& sched, RngStream& stream) {
    const std::size_t n = batch.size(), d = batch.x0.dim(1);
    NoisedBatch nb;
    nb.steps.resize(n);
    for (auto& t : nb.steps) t = 1 + static_cast<int>(stream.index(static_cast<std::size_t>(sched.T)));
    nb.eps = stream.gaussian(Shape{n, d});
    nb.x_t = Tensor(Shape{n, d});
    for (std::size_t i = 0; i < n; ++i) {
        const double a = std::sqrt(sched.alpha_bar_at(nb.steps[i]));
        const double s = sched.sigma_at(nb.steps[i]);
        for (std::size_t j = 0; j < d; ++j) nb.x_t.at(i, j) = a * batch.x0.at(i, j) + s * nb.eps.at(i, j);
    }
    return nb;
}

}  // namespace

double dsm_loss(const EpsilonModel& model, const ConditionedBatch& batch, const DiffusionSchedule& sched,
                RngStream& stream) {
    if (batch.size() == 0) throw std::invalid_argument("dsm_loss on an empty batch");
    const NoisedBatch nb = noise_batch(batch, sched, stream);
    const Tensor pred = model(nb.x_t, nb.steps, batch.cond);
    if (pred.shape() != nb.eps.shape()) throw ShapeError("dsm_loss: model output shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) acc += (pred[i] - nb.eps[i]) * (pred[i] - nb.eps[i]);
    return acc / static_cast<double>(batch.size());
}

double dsm_loss(const DenoiserNet& net, const ConditionedBatch& batch, const DiffusionSchedule& sched,
                RngStream& stream) {
    if (net.config().parameterization != Parameterization::epsilon) {
        throw std::invalid_argument("dsm_loss needs an epsilon-parameterized net");
    }
    return dsm_loss(
        [&](const Tensor& x, std::span<const int> steps, std::span<const std::size_t> cond) {
            std::vector<double> times(steps.size());
            for (std::size_t i = 0; i < steps.size(); ++i)
                times[i] = static_cast<double>(steps[i]) / static_cast<double>(sched.T);
            return net.evaluate(x, times, cond);
        },
        batch, sched, stream);
}

Var dsm_loss_graph(const DenoiserNet& net, std::span<const Var> params, const ConditionedBatch& batch,
                   const DiffusionSchedule& sched, RngStream& stream) {
    NoisedBatch nb = noise_batch(batch, sched, stream);
    std::vector<double> times(batch.size());
    for (std::size_t i = 0; i < times.size(); ++i)
        times[i] = static_cast<double>(nb.steps[i]) / static_cast<double>(sched.T);
    Tape& tape = *params.front().tape();
    const Var x = tape.constant(std::move(nb.x_t));
    const Var pred = net.forward(params, x, times, batch.cond);
    const Var err = pred - tape.constant(std::move(nb.eps));
    return ad::scale(ad::sum(ad::square(err)), 1.0 / static_cast<double>(batch.size()));
}

Var flow_matching_loss_graph(const DenoiserNet& net, std::span<const Var> params, const ConditionedBatch& batch,
                             RngStream& stream) {
    const std::size_t n = batch.size(), d = batch.x0.dim(1);
    std::vector<double> times(n);
    for (auto& t : times) t = stream.uniform();
    const Tensor x1 = stream.gaussian(Shape{n, d});
    Tensor x_t(Shape{n, d}), target(Shape{n, d});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            x_t.at(i, j) = (1.0 - times[i]) * batch.x0.at(i, j) + times[i] * x1.at(i, j);
            target.at(i, j) = x1.at(i, j) - batch.x0.at(i, j);
        }
    Tape& tape = *params.front().tape();
    const Var pred = net.forward(params, tape.constant(std::move(x_t)), times, batch.cond);
    const Var err = pred - tape.constant(std::move(target));
    return ad::scale(ad::sum(ad::square(err)), 1.0 / static_cast<double>(n));
}

double LossMonitor::push(double loss, long iteration) {
    if (!std::isfinite(loss)) {
        throw DivergenceError("loss became non-finite at iteration " + std::to_string(iteration));
    }
    if (!started_) {
        initial_ = loss;
        ema_ = loss;
        started_ = true;
    } else {
        ema_ = decay_ * ema_ + (1.0 - decay_) * loss;
    }
    above_ = loss > 10.0 * initial_ ? above_ + 1 : 0;
    if (above_ >= 100) {
        std::ostringstream os;
        os << "training diverged: loss above 10x initial (" << initial_ << ") for 100 consecutive steps; "
           << "iteration " << iteration << ", last loss " << loss << ", ema " << ema_;
        throw DivergenceError(os.str());
    }
    return ema_;
}

ConditionedBatch draw_minibatch(const ConditionedBatch& data, std::size_t n, RngStream& stream) {
    const std::size_t d = data.x0.dim(1);
    ConditionedBatch b;
    b.x0 = Tensor(Shape{n, d});
    b.cond.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t k = stream.index(data.size());
        b.cond[i] = data.cond[k];
        for (std::size_t j = 0; j < d; ++j) b.x0.at(i, j) = data.x0.at(k, j);
    }
    return b;
}

TrainResult train_base(DenoiserNet net, const ConditionedBatch& data, const Process& process,
                       const TrainConfig& config) {
    if (data.size() == 0) throw std::invalid_argument("train_base: dataset is empty");
    data.validate(net.config().data_dim);
    const bool vp = process.paradigm() == Paradigm::vp;
    if (vp != (net.config().parameterization == Parameterization::epsilon)) {
        throw std::invalid_argument("train_base: parameterization does not match the paradigm");
    }
    TrainResult result;
    RngStream stream(config.seed);
    Adam opt(net.parameters(), AdamConfig{config.learning_rate});
    LossMonitor monitor(config.ema_decay);
    for (long it = 0; it < config.iterations; ++it) {
        const ConditionedBatch mb = draw_minibatch(data, config.batch_size, stream);
        Tape tape;
        const auto params = net.bind(tape, true);
        const Var loss = vp ? dsm_loss_graph(net, params, mb, process.vp_schedule(), stream)
                            : flow_matching_loss_graph(net, params, mb, stream);
        const double value = loss.value().item();
        const auto grads = tape.gradient(loss, params);
        opt.step(grads);
        result.losses.push_back(value);
        result.ema.push_back(monitor.push(value, it));
        if (config.loss_threshold > 0.0 && monitor.ema() < config.loss_threshold) break;
    }
    result.net = std::move(net);
    return result;
}

}  // namespace hyperalign
