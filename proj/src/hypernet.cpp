// SPDX-License-Identifier: Apache-2.0
#include "hyperalign/hypernet.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace hyperalign {

namespace {

constexpr double kRelativeFloor = 1e-8;

Tensor gaussian_scaled(RngStream& rng, Shape shape, double std) {
    Tensor t = rng.gaussian(shape);
    for (auto& v : t.values()) v *= std;
    return t;
}

}  // namespace

HyperNet::HyperNet(HyperNetConfig config, const DenoiserNet& net, RngStream init) : config_(std::move(config)) {
    const auto& dc = net.config();
    if (config_.rank == 0 || config_.query_tokens == 0 || config_.kv_tokens == 0 || config_.token_width == 0 ||
        config_.ffn_hidden == 0) {
        throw std::invalid_argument("hypernet: rank, token counts and widths must be >= 1");
    }
    if (config_.target_layers.empty()) throw std::invalid_argument("hypernet: no target layers");
    for (std::size_t l : config_.target_layers) {
        if (l >= net.num_layers()) {
            throw std::invalid_argument("hypernet: target layer " + std::to_string(l) + " absent from the denoiser (" +
                                        std::to_string(net.num_layers()) + " linear layers)");
        }
        layer_shapes_.emplace_back(net.layer_in(l), net.layer_out(l));
    }
    time_features_ = dc.time_features;
    num_conditions_ = dc.num_conditions;
    data_dim_ = dc.data_dim;
    const std::size_t D = config_.token_width, q = config_.query_tokens, r = config_.rank;

    auto add = [&](std::string name, Tensor t) {
        names_.push_back(std::move(name));
        params_.push_back(std::move(t));
    };
    add("cond_embedding", net.embedding());
    std::size_t width = dc.data_dim + dc.time_features + dc.cond_embedding;
    for (std::size_t i = 0; i < config_.encoder_hidden.size(); ++i) {
        const std::size_t h = config_.encoder_hidden[i];
        add("encoder." + std::to_string(i) + ".W", gaussian_scaled(init, {width, h}, std::sqrt(2.0 / double(width))));
        add("encoder." + std::to_string(i) + ".b", Tensor({h}));
        width = h;
    }
    add("kv.W", gaussian_scaled(init, {width, config_.kv_tokens * D}, 1.0 / std::sqrt(double(width))));
    add("kv.b", Tensor({config_.kv_tokens * D}));
    add("query", Tensor({q, D}));
    for (const char* n : {"attn.Wq", "attn.Wk", "attn.Wv", "attn.Wo"})
        add(n, gaussian_scaled(init, {D, D}, 1.0 / std::sqrt(double(D))));
    add("ffn.W1", gaussian_scaled(init, {D, config_.ffn_hidden}, std::sqrt(2.0 / double(D))));
    add("ffn.b1", Tensor({config_.ffn_hidden}));
    add("ffn.W2", gaussian_scaled(init, {config_.ffn_hidden, D}, 1.0 / std::sqrt(double(config_.ffn_hidden))));
    add("ffn.b2", Tensor({D}));
    const std::size_t flat = q * D;
    for (std::size_t i = 0; i < layer_shapes_.size(); ++i) {
        const auto [in, out] = layer_shapes_[i];
        const std::string tag = "head." + std::to_string(config_.target_layers[i]);
        // A rows land near unit norm over the layer input so A h stays O(1).
        add(tag + ".A.W", gaussian_scaled(init, {flat, r * in}, 1.0 / std::sqrt(double(flat) * double(in))));
        add(tag + ".A.b", Tensor({r * in}));
        add(tag + ".B.W", Tensor({flat, out * r}));
        add(tag + ".B.b", Tensor({out * r}));
    }
}

std::size_t HyperNet::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
}

std::vector<Tensor*> HyperNet::parameters() {
    std::vector<Tensor*> out;
    for (auto& p : params_) out.push_back(&p);
    return out;
}

std::vector<const Tensor*> HyperNet::parameters() const {
    std::vector<const Tensor*> out;
    for (const auto& p : params_) out.push_back(&p);
    return out;
}

std::vector<std::string> HyperNet::parameter_names() const { return names_; }

std::vector<Var> HyperNet::bind(Tape& tape, bool trainable) const {
    std::vector<Var> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(tape.borrow(p, trainable));
    return out;
}

LoraVars HyperNet::forward(std::span<const Var> params, const Var& x, std::span<const double> times,
                           std::span<const std::size_t> cond) const {
    if (params.size() != params_.size()) throw std::invalid_argument("hypernet: wrong parameter count");
    const std::size_t n = x.shape().at(0);
    if (x.shape().size() != 2 || x.shape()[1] != data_dim_) {
        throw ShapeError("hypernet input must be (batch, " + std::to_string(data_dim_) + "), got " + shape_str(x.shape()));
    }
    if (times.size() != n || cond.size() != n) throw ShapeError("hypernet: times/cond length must equal batch");
    for (auto c : cond)
        if (c >= num_conditions_) throw std::out_of_range("hypernet: condition id " + std::to_string(c) + " out of range");
    Tape& tape = *x.tape();
    const std::size_t D = config_.token_width, q = config_.query_tokens;
    std::size_t k = 0;
    const Var emb = ad::gather_rows(params[k++], cond);
    const Var parts[] = {x, tape.constant(hyperalign::time_features(times, time_features_)), emb};
    Var h = ad::concat_last(parts);
    for (std::size_t i = 0; i < config_.encoder_hidden.size(); ++i) {
        h = ad::gelu(ad::matmul(h, params[k]) + params[k + 1]);
        k += 2;
    }
    const Var kv = ad::reshape(ad::matmul(h, params[k]) + params[k + 1], Shape{n, config_.kv_tokens, D});
    k += 2;
    const Var q0 = ad::expand_leading(params[k++], n);  // (n, q, D)
    const Var Wq = params[k++], Wk = params[k++], Wv = params[k++], Wo = params[k++];
    const Var Q = ad::matmul(q0, Wq), K = ad::matmul(kv, Wk), V = ad::matmul(kv, Wv);
    const Var att = ad::softmax_last(ad::bmm(Q, ad::transpose_last(K)) * (1.0 / std::sqrt(double(D))));
    Var tok = q0 + ad::matmul(ad::bmm(att, V), Wo);
    const Var ff = ad::matmul(ad::gelu(ad::matmul(tok, params[k]) + params[k + 1]), params[k + 2]) + params[k + 3];
    k += 4;
    tok = tok + ff;
    const Var flat = ad::reshape(tok, Shape{n, q * D});
    LoraVars out;
    for (std::size_t i = 0; i < layer_shapes_.size(); ++i) {
        const auto [in, o] = layer_shapes_[i];
        LoraVars::Layer l;
        l.layer = config_.target_layers[i];
        l.A = ad::reshape(ad::matmul(flat, params[k]) + params[k + 1], Shape{n, config_.rank, in});
        l.B = ad::reshape(ad::matmul(flat, params[k + 2]) + params[k + 3], Shape{n, o, config_.rank});
        l.scale = config_.lora_scale;
        out.layers.push_back(l);
        k += 4;
    }
    return out;
}

LoraDelta HyperNet::predict(const Tensor& x, std::span<const double> times, std::span<const std::size_t> cond) const {
    Tape tape;
    const auto params = bind(tape, false);
    return values_of(forward(params, tape.borrow(x), times, cond));
}

HyperNet build_hypernet(const HyperNetConfig& config, const DenoiserNet& net, std::uint64_t seed) {
    return HyperNet(config, net, RngStream(seed));
}

LoraDelta predict_lora(const HyperNet& hnet, const Process& process, const Tensor& x_t, int k,
                       std::span<const std::size_t> cond) {
    const std::vector<double> times(x_t.dim(0), process.model_time(k));
    return hnet.predict(x_t, times, cond);
}

const char* to_string(Strategy s) {
    switch (s) {
        case Strategy::S: return "S";
        case Strategy::I: return "I";
        case Strategy::P: return "P";
    }
    return "?";
}

Strategy strategy_from_string(const std::string& s) {
    if (s == "S") return Strategy::S;
    if (s == "I") return Strategy::I;
    if (s == "P") return Strategy::P;
    throw std::invalid_argument("unknown strategy '" + s + "' (expected S, I or P)");
}

void KeystepSchedule::validate() const {
    if (steps.empty()) throw std::invalid_argument("keystep schedule is empty");
    if (steps.front() != T) throw std::invalid_argument("keystep schedule must start at T = " + std::to_string(T));
    for (std::size_t i = 1; i < steps.size(); ++i)
        if (steps[i] >= steps[i - 1]) throw std::invalid_argument("keysteps must be strictly descending");
    if (steps.back() < 1) throw std::invalid_argument("keysteps must lie in [1, T]");
}

int KeystepSchedule::keystep_for(int t) const {
    if (t < 1 || t > T) throw std::out_of_range("step " + std::to_string(t) + " outside [1, T]");
    int best = T;
    for (int s : steps)
        if (s >= t) best = s;
    return best;
}

bool KeystepSchedule::is_keystep(int t) const { return std::find(steps.begin(), steps.end(), t) != steps.end(); }

void StrategySpec::validate(int T) const {
    if (variant != Strategy::P) return;
    if (keysteps.T != T) {
        throw std::invalid_argument("keystep schedule built for T = " + std::to_string(keysteps.T) +
                                    " but the process has " + std::to_string(T) + " steps");
    }
    keysteps.validate();
}

AlignedTrajectory aligned_sample(const Process& process, const DenoiserNet& net, const HyperNet& hnet,
                                 std::span<const std::size_t> cond, std::span<RngStream> streams,
                                 const StrategySpec& strategy, bool log_deltas, const StepObserver& observer) {
    strategy.validate(process.steps());
    if (cond.size() != streams.size()) throw ShapeError("aligned_sample: one stream per condition entry required");
    AlignedTrajectory out;
    LoraDelta current;
    const DeltaSchedule deltas = [&](int k, const Tensor& x) -> const LoraDelta* {
        bool regenerate = false;
        switch (strategy.variant) {
            case Strategy::S: regenerate = true; break;
            case Strategy::I: regenerate = k == process.steps(); break;
            case Strategy::P: regenerate = strategy.keysteps.is_keystep(k); break;
        }
        if (regenerate) {
            current = predict_lora(hnet, process, x, k, cond);
            if (log_deltas) out.log.push_back({k, current});
        }
        return &current;
    };
    out.samples = run_chain(process, net, initial_noise(net, streams), cond, streams, deltas, observer);
    return out;
}

KeystepSelection keysteps_from_profile(std::vector<double> profile, int T, std::size_t M) {
    if (T < 2) throw std::invalid_argument("keysteps: T must be >= 2");
    if (profile.size() != static_cast<std::size_t>(T - 1)) {
        throw std::invalid_argument("keysteps: profile must hold T - 1 = " + std::to_string(T - 1) + " values");
    }
    if (M < 2) throw std::invalid_argument("keysteps: M must be >= 2");
    if (M > static_cast<std::size_t>(T)) {
        throw std::invalid_argument("keysteps: M = " + std::to_string(M) + " exceeds the " + std::to_string(T) +
                                    " available steps");
    }
    KeystepSelection sel;
    const auto d = [&](int t) { return profile[static_cast<std::size_t>(std::clamp(t, 1, T - 1) - 1)]; };
    sel.curvature.resize(profile.size());
    for (int t = 1; t <= T - 1; ++t) sel.curvature[static_cast<std::size_t>(t - 1)] = std::abs(d(t - 1) - 2.0 * d(t) + d(t + 1));
    std::vector<int> order;
    for (int t = 1; t <= T - 1; ++t) order.push_back(t);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        const double ka = sel.curvature[static_cast<std::size_t>(a - 1)];
        const double kb = sel.curvature[static_cast<std::size_t>(b - 1)];
        return ka != kb ? ka > kb : a > b;
    });
    sel.schedule.T = T;
    sel.schedule.steps.push_back(T);
    std::vector<int> chosen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(M - 1));
    std::sort(chosen.begin(), chosen.end(), std::greater<>());
    sel.schedule.steps.insert(sel.schedule.steps.end(), chosen.begin(), chosen.end());
    sel.profile = std::move(profile);
    return sel;
}

std::vector<double> change_profile(const Process& process, const DenoiserNet& net,
                                   std::span<const std::size_t> probe_cond, std::uint64_t seed) {
    if (probe_cond.empty()) throw std::invalid_argument("select_keysteps: probe set is empty");
    const int T = process.steps();
    const std::size_t n = probe_cond.size();
    std::vector<double> profile(static_cast<std::size_t>(T - 1), 0.0);
    Tensor prev;
    auto streams = trajectory_streams(seed, n);
    const StepObserver observe = [&](int k, const Tensor& x) {
        Tensor pred = predict_x0(process, net, x, k, probe_cond);
        if (k < T) {
            double acc = 0.0;
            const std::size_t d = pred.dim(1);
            for (std::size_t i = 0; i < n; ++i) {
                double num = 0.0, den = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    num += std::abs(pred.at(i, j) - prev.at(i, j));
                    den += std::abs(prev.at(i, j));
                }
                acc += num / (den + kRelativeFloor);
            }
            profile[static_cast<std::size_t>(k - 1)] = acc / static_cast<double>(n);
        }
        prev = std::move(pred);
    };
    sample(process, net, probe_cond, streams, observe);
    return profile;
}

KeystepSelection select_keysteps(const Process& process, const DenoiserNet& net,
                                 std::span<const std::size_t> probe_cond, std::size_t M, std::uint64_t seed) {
    return keysteps_from_profile(change_profile(process, net, probe_cond, seed), process.steps(), M);
}

}  // namespace hyperalign
