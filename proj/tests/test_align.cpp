// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "hyperalign/align.hpp"
#include "support.hpp"

using namespace hyperalign;

namespace {

DenoiserNet small_net(Parameterization p, std::uint64_t seed = 5) {
    DenoiserConfig cfg;
    cfg.hidden = {16, 16, 16};
    cfg.parameterization = p;
    return DenoiserNet(cfg, RngStream(seed));
}

HyperNetConfig small_config() {
    HyperNetConfig c;
    c.encoder_hidden = {12, 10};
    c.token_width = 8;
    c.ffn_hidden = 6;
    c.query_tokens = 3;
    c.kv_tokens = 2;
    c.rank = 2;
    return c;
}

HyperNet live_hypernet(const DenoiserNet& net, std::uint64_t seed = 3) {
    HyperNet h = build_hypernet(small_config(), net, seed);
    RngStream rng(seed + 100);
    const auto names = h.parameter_names();
    auto params = h.parameters();
    for (std::size_t i = 0; i < params.size(); ++i)
        if (names[i].find(".B.") != std::string::npos)
            for (auto& v : params[i]->values()) v = 0.05 * rng.normal();
    return h;
}

Process process_for(Parameterization p) {
    return p == Parameterization::epsilon ? Process::vp(make_vp_schedule(40, 1e-3, 0.2))
                                          : Process::flow(make_flow_schedule(40));
}

struct Fixture {
    Parameterization p;
    DenoiserNet net;
    Process process;
    RewardSpec spec;
    ConditionedBatch pool;
    PreferenceSet prefs;
    AlignTrainConfig config;

    explicit Fixture(Parameterization param)
        : p(param), net(small_net(param)), process(process_for(param)), spec(default_reward(default_mixture())) {
        RngStream rng(8);
        pool = make_mixture_dataset(default_mixture(), 64, rng);
        prefs.samples = make_mixture_dataset(default_mixture(), 64, rng);
        prefs.eta.assign(static_cast<std::size_t>(process.steps()), 1.0);
        config.batch_size = 16;
        config.iterations = 3;
        config.seed = 21;
    }
};

// Loss of one iteration on a fresh tape, value only.
double total_loss(const HyperNet& h, const Fixture& f, long iter) {
    Tape tape;
    const auto psi = h.bind(tape, false);
    const auto theta = f.net.bind(tape, false);
    double total = 0.0;
    if (f.config.use_reward()) {
        RngStream s = align_stream(f.config.seed, iter, 0);
        total += loss_reward(h, psi, f.net, theta, f.pool, f.process, f.spec, f.config, s).value().item();
    }
    if (f.config.use_reg()) {
        RngStream s = align_stream(f.config.seed, iter, 1);
        total += loss_reg(h, psi, f.net, theta, f.prefs, f.process, f.config, s).value().item();
    }
    return total;
}

}  // namespace

TEST_CASE("loss mix parsing and validation") {
    for (auto m : {LossMix::reward, LossMix::reg, LossMix::both}) CHECK(loss_mix_from_string(to_string(m)) == m);
    CHECK_THROWS_AS(loss_mix_from_string("none"), std::invalid_argument);
    AlignTrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.t_min = 0.95;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = AlignTrainConfig{};
    c.iterations = -1;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = AlignTrainConfig{};
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("reward loss") {
    for (auto p : {Parameterization::epsilon, Parameterization::velocity}) {
        CAPTURE(to_string(p));
        const Fixture f(p);

        SUBCASE("untrained hypernet equals the base one-step reward") {
            const HyperNet h = build_hypernet(small_config(), f.net, 1);
            Tape tape;
            const auto psi = h.bind(tape, true);
            const auto theta = f.net.bind(tape, false);
            RngStream s1 = align_stream(3, 0, 0);
            double mean_r = 0.0;
            const double loss =
                loss_reward(h, psi, f.net, theta, f.pool, f.process, f.spec, f.config, s1, &mean_r).value().item();
            CHECK(loss == -mean_r);

            // Replay the same draws through the plain denoiser.
            RngStream s2 = align_stream(3, 0, 0);
            const ConditionedBatch mb = draw_minibatch(f.pool, f.config.batch_size, s2);
            const std::size_t n = mb.size();
            double acc = 0.0;
            if (p == Parameterization::epsilon) {
                const auto& sch = f.process.vp_schedule();
                std::vector<int> steps(n);
                for (auto& t : steps) t = 8 + static_cast<int>(s2.index(36 - 8 + 1));  // [0.2T, 0.9T]
                const Tensor eps = s2.gaussian({n, 2});
                for (std::size_t i = 0; i < n; ++i) {
                    Tensor xt(Shape{1, 2});
                    for (std::size_t j = 0; j < 2; ++j)
                        xt.at(0, j) = std::sqrt(sch.alpha_bar_at(steps[i])) * mb.x0.at(i, j) +
                                      sch.sigma_at(steps[i]) * eps.at(i, j);
                    const std::size_t c[] = {mb.cond[i]};
                    const Tensor x0 = predict_x0(f.process, f.net, xt, steps[i], c);
                    acc += reward_eval({x0.data(), 2}, c[0], f.spec);
                }
            } else {
                std::vector<double> times(n);
                for (auto& t : times) t = 0.2 + 0.7 * s2.uniform();
                const Tensor x1 = s2.gaussian({n, 2});
                for (std::size_t i = 0; i < n; ++i) {
                    Tensor xt(Shape{1, 2});
                    for (std::size_t j = 0; j < 2; ++j) xt.at(0, j) = (1.0 - times[i]) * mb.x0.at(i, j) + times[i] * x1.at(i, j);
                    const std::size_t c[] = {mb.cond[i]};
                    const Tensor v = f.net.evaluate(xt, std::vector<double>{times[i]}, c);
                    const double x0[] = {xt[0] - times[i] * v[0], xt[1] - times[i] * v[1]};
                    acc += reward_eval(x0, c[0], f.spec);
                }
            }
            CHECK(mean_r == doctest::Approx(acc / static_cast<double>(n)).epsilon(1e-12));
        }

        SUBCASE("constant reward: loss is minus the constant, gradient zero") {
            RewardSpec flat = f.spec;
            flat.family = RewardFamily::composite;
            flat.pull_weight = flat.annulus_weight = 0.0;
            const HyperNet h = live_hypernet(f.net);
            Tape tape;
            const auto psi = h.bind(tape, true);
            const auto theta = f.net.bind(tape, false);
            RngStream s = align_stream(3, 0, 0);
            const Var loss = loss_reward(h, psi, f.net, theta, f.pool, f.process, flat, f.config, s);
            CHECK(loss.value().item() == 0.0);
            for (const auto& g : tape.gradient(loss, psi))
                for (double v : g.values()) CHECK(v == 0.0);
        }

        SUBCASE("empty pool") {
            const HyperNet h = build_hypernet(small_config(), f.net, 1);
            Tape tape;
            const auto psi = h.bind(tape, true);
            const auto theta = f.net.bind(tape, false);
            RngStream s(1);
            CHECK_THROWS_AS(loss_reward(h, psi, f.net, theta, ConditionedBatch{Tensor({0, 2}), {}}, f.process, f.spec,
                                        f.config, s),
                            std::invalid_argument);
        }
    }
}

TEST_CASE("regularization loss") {
    for (auto p : {Parameterization::epsilon, Parameterization::velocity}) {
        CAPTURE(to_string(p));
        Fixture f(p);
        const HyperNet h = live_hypernet(f.net);

        SUBCASE("zero eta gives zero loss and gradient") {
            f.prefs.eta.assign(f.prefs.eta.size(), 0.0);
            Tape tape;
            const auto psi = h.bind(tape, true);
            const auto theta = f.net.bind(tape, false);
            RngStream s = align_stream(3, 0, 1);
            const Var loss = loss_reg(h, psi, f.net, theta, f.prefs, f.process, f.config, s);
            CHECK(loss.value().item() == 0.0);
            for (const auto& g : tape.gradient(loss, psi))
                for (double v : g.values()) CHECK(v == 0.0);
        }

        SUBCASE("value matches a replay through the injected evaluator") {
            Tape tape;
            const auto psi = h.bind(tape, true);
            const auto theta = f.net.bind(tape, false);
            RngStream s = align_stream(3, 0, 1);
            const double loss = loss_reg(h, psi, f.net, theta, f.prefs, f.process, f.config, s).value().item();

            RngStream r = align_stream(3, 0, 1);
            const ConditionedBatch mb = draw_minibatch(f.prefs.samples, f.config.batch_size, r);
            const std::size_t n = mb.size();
            const int T = f.process.steps();
            std::vector<double> times(n), weight(n);
            Tensor xt(Shape{n, 2}), target(Shape{n, 2});
            if (p == Parameterization::epsilon) {
                const auto& sch = f.process.vp_schedule();
                std::vector<int> steps(n);
                for (auto& t : steps) t = 1 + static_cast<int>(r.index(static_cast<std::size_t>(T)));
                const Tensor eps = r.gaussian({n, 2});
                for (std::size_t i = 0; i < n; ++i) {
                    times[i] = static_cast<double>(steps[i]) / T;
                    weight[i] = 1.0 / (1.0 - sch.alpha_bar_at(steps[i]));
                    for (std::size_t j = 0; j < 2; ++j) {
                        xt.at(i, j) = std::sqrt(sch.alpha_bar_at(steps[i])) * mb.x0.at(i, j) + sch.sigma_at(steps[i]) * eps.at(i, j);
                        target.at(i, j) = eps.at(i, j);
                    }
                }
            } else {
                const Tensor x1 = r.gaussian({n, 2});
                for (std::size_t i = 0; i < n; ++i) {
                    const double t = 1.0 / T + (1.0 - 1.0 / T) * r.uniform();
                    times[i] = t;
                    weight[i] = (1.0 - t) * (1.0 - t) / (t * t);
                    for (std::size_t j = 0; j < 2; ++j) {
                        xt.at(i, j) = (1.0 - t) * mb.x0.at(i, j) + t * x1.at(i, j);
                        target.at(i, j) = x1.at(i, j) - mb.x0.at(i, j);
                    }
                }
            }
            const LoraDelta delta = h.predict(xt, times, mb.cond);
            const Tensor pred = f.net.evaluate(xt, times, mb.cond, &delta);
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                double e = 0.0;
                for (std::size_t j = 0; j < 2; ++j) e += (pred.at(i, j) - target.at(i, j)) * (pred.at(i, j) - target.at(i, j));
                acc += weight[i] * e;
            }
            CHECK(loss == doctest::Approx(acc / static_cast<double>(n)).epsilon(1e-10));
            CHECK(loss > 0.0);
        }

        SUBCASE("eta length must match the process") {
            f.prefs.eta.pop_back();
            Tape tape;
            const auto psi = h.bind(tape, true);
            const auto theta = f.net.bind(tape, false);
            RngStream s(1);
            CHECK_THROWS_WITH_AS(loss_reg(h, psi, f.net, theta, f.prefs, f.process, f.config, s),
                                 doctest::Contains("eta"), std::invalid_argument);
        }
    }
}

TEST_CASE("joint gradient matches finite differences") {
    for (auto p : {Parameterization::epsilon, Parameterization::velocity}) {
        CAPTURE(to_string(p));
        const Fixture f(p);
        HyperNet h = live_hypernet(f.net);
        const AlignStep step = align_gradient(h, f.net, f.pool, f.prefs, f.process, f.spec, f.config, 2);
        CHECK(step.reward_loss + step.reg_loss == doctest::Approx(total_loss(h, f, 2)).epsilon(1e-12));

        RngStream rng(30);
        auto params = h.parameters();
        double worst = 0.0;
        for (int probe = 0; probe < 10; ++probe) {
            const std::size_t pi = rng.index(params.size());
            const std::size_t k = rng.index(params[pi]->size());
            const double orig = (*params[pi])[k], eps = 1e-6;
            (*params[pi])[k] = orig + eps;
            const double up = total_loss(h, f, 2);
            (*params[pi])[k] = orig - eps;
            const double down = total_loss(h, f, 2);
            (*params[pi])[k] = orig;
            const double fd = (up - down) / (2.0 * eps), an = step.grads[pi][k];
            worst = std::max(worst, std::abs(fd - an) / std::max(std::abs(fd), 1e-4));
        }
        CHECK(worst <= 1e-4);
    }
}

TEST_CASE("loss toggles reduce to the single-loss gradients") {
    Fixture f(Parameterization::epsilon);
    const HyperNet h = live_hypernet(f.net);
    const auto single = [&](bool reward) {
        Tape tape;
        const auto psi = h.bind(tape, true);
        const auto theta = f.net.bind(tape, false);
        RngStream s = align_stream(f.config.seed, 0, reward ? 0 : 1);
        const Var loss = reward ? loss_reward(h, psi, f.net, theta, f.pool, f.process, f.spec, f.config, s)
                                : loss_reg(h, psi, f.net, theta, f.prefs, f.process, f.config, s);
        return tape.gradient(loss, psi);
    };
    for (bool reward : {true, false}) {
        f.config.losses = reward ? LossMix::reward : LossMix::reg;
        const AlignStep step = align_gradient(h, f.net, f.pool, f.prefs, f.process, f.spec, f.config, 0);
        const auto expect = single(reward);
        REQUIRE(step.grads.size() == expect.size());
        for (std::size_t i = 0; i < expect.size(); ++i) CHECK(bitwise_equal(step.grads[i], expect[i]));
        CHECK((reward ? step.reg_loss : step.reward_loss) == 0.0);
    }
}

TEST_CASE("train_hyper") {
    Fixture f(Parameterization::epsilon);
    const HyperNet h0 = build_hypernet(small_config(), f.net, 1);
    const DenoiserNet frozen = f.net;

    SUBCASE("zero budget leaves the hypernet unchanged") {
        f.config.iterations = 0;
        const auto r = train_hyper(h0, f.net, f.pool, f.prefs, f.process, f.spec, f.config);
        CHECK(r.hnet == h0);
        CHECK(r.curves.ema.empty());
        auto s1 = trajectory_streams(2, 4), s2 = trajectory_streams(2, 4);
        const std::vector<std::size_t> cond = {0, 1, 2, 3};
        CHECK(bitwise_equal(aligned_sample(f.process, f.net, r.hnet, cond, s1, StrategySpec{}).samples,
                            sample(f.process, f.net, cond, s2)));
    }

    SUBCASE("training moves psi only and is deterministic") {
        f.config.iterations = 4;
        const auto a = train_hyper(h0, f.net, f.pool, f.prefs, f.process, f.spec, f.config);
        const auto b = train_hyper(h0, f.net, f.pool, f.prefs, f.process, f.spec, f.config);
        CHECK(a.hnet == b.hnet);
        CHECK_FALSE(a.hnet == h0);
        CHECK(f.net == frozen);
        CHECK(a.curves.reward_loss.size() == 4);
        CHECK(a.curves.ema.size() == 4);
        for (std::size_t i = 0; i < 4; ++i) CHECK(a.curves.reward_loss[i] == -a.curves.mean_reward[i]);
    }

    SUBCASE("reg-only training skips the reward columns") {
        f.config.iterations = 2;
        f.config.losses = LossMix::reg;
        const auto r = train_hyper(h0, f.net, f.pool, f.prefs, f.process, f.spec, f.config);
        const auto path = std::filesystem::temp_directory_path() / "hyperalign_align_curve.csv";
        r.curves.write_csv(path, f.config.losses);
        std::ifstream in(path);
        std::string header;
        std::getline(in, header);
        CHECK(header == "iter,L_G");
        f.config.losses = LossMix::both;
        r.curves.write_csv(path, f.config.losses);
        std::ifstream in2(path);
        std::getline(in2, header);
        CHECK(header == "iter,L_R,L_G,mean_reward");
        std::filesystem::remove(path);
    }

    SUBCASE("preference set must cover every condition") {
        f.prefs.samples = f.prefs.samples.with_condition(0);
        CHECK_THROWS_AS(train_hyper(h0, f.net, f.pool, f.prefs, f.process, f.spec, f.config), std::invalid_argument);
    }
}

TEST_CASE("base sample pool") {
    const DenoiserNet net = small_net(Parameterization::epsilon);
    const Process process = process_for(Parameterization::epsilon);
    const auto pool = base_sample_pool(process, net, 3, 9);
    REQUIRE(pool.size() == 12);
    for (std::size_t i = 0; i < 12; ++i) CHECK(pool.cond[i] == i % 4);
    auto s = trajectory_streams(9, 12);
    CHECK(bitwise_equal(pool.x0, sample(process, net, pool.cond, s)));
}
