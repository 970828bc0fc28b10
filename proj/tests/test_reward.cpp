// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "hyperalign/reward.hpp"
#include "support.hpp"

using namespace hyperalign;

namespace {

RewardSpec spec_with(RewardFamily f, Tensor targets, double gamma = 0.5) {
    RewardSpec s;
    s.family = f;
    s.targets = std::move(targets);
    s.gamma = gamma;
    return s;
}

RewardSpec two_targets(RewardFamily f) { return spec_with(f, Tensor::from_rows({{2.0, 2.0}, {-1.0, 0.5}})); }

// Isotropic Gaussian N(mean, tau^2 I) in 2-D.
GridDensity gaussian_density(double mx, double my, double tau) {
    return [=](std::size_t, double x, double y) {
        const double q = ((x - mx) * (x - mx) + (y - my) * (y - my)) / (tau * tau);
        return std::exp(-0.5 * q) / (2.0 * M_PI * tau * tau);
    };
}

}  // namespace

TEST_CASE("reward values") {
    const RewardSpec pull = two_targets(RewardFamily::mode_pull);
    const double at_target[] = {2.0, 2.0};
    CHECK(reward_eval(at_target, 0, pull) == 0.0);
    const double p[] = {0.0, 1.0};
    CHECK(reward_eval(p, 1, pull) == doctest::Approx(-(1.0 + 0.25)).epsilon(1e-15));

    const RewardSpec ring = two_targets(RewardFamily::annulus);
    const double on_ring[] = {0.6, 0.8};
    CHECK(std::abs(reward_eval(on_ring, 0, ring)) < 1e-15);

    const RewardSpec comp = two_targets(RewardFamily::composite);
    const double origin[] = {0.0, 0.0};
    CHECK(reward_eval(origin, 0, comp) == -9.0);

    CHECK_THROWS_AS(reward_eval(origin, 2, pull), std::out_of_range);
    const double three[] = {0.0, 0.0, 0.0};
    CHECK_THROWS_AS(reward_eval(three, 0, pull), ShapeError);
    RewardSpec bad = pull;
    bad.gamma = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("reward gradients") {
    const double at_target[] = {2.0, 2.0};
    const auto g0 = reward_grad(at_target, 0, two_targets(RewardFamily::mode_pull));
    CHECK(g0[0] == 0.0);
    CHECK(g0[1] == 0.0);
    const double origin[] = {0.0, 0.0};
    const auto gr = reward_grad(origin, 0, two_targets(RewardFamily::annulus));
    CHECK(gr[0] == 0.0);
    CHECK(gr[1] == 0.0);

    RngStream rng(41);
    for (auto family : {RewardFamily::mode_pull, RewardFamily::annulus, RewardFamily::composite}) {
        CAPTURE(to_string(family));
        const RewardSpec spec = two_targets(family);
        double worst_ad = 0.0, worst_fd = 0.0;
        for (int k = 0; k < 1000; ++k) {
            const Tensor x = Tensor(Shape{1, 2}, {rng.uniform() * 8.0 - 4.0, rng.uniform() * 8.0 - 4.0});
            const std::size_t c = static_cast<std::size_t>(k % 2);
            const auto g = reward_grad({x.data(), 2}, c, spec);
            const Tensor analytic(Shape{1, 2}, g);
            if (family == RewardFamily::mode_pull) {
                for (int j = 0; j < 2; ++j) CHECK(g[j] == -2.0 * (x[j] - spec.targets.at(c, j)));
            }

            Tape tape;
            const Var xv = tape.param(x);
            const std::size_t cs[] = {c};
            const Var leaves[] = {xv};
            const Tensor autodiff = tape.gradient(ad::sum(reward_graph(xv, cs, spec)), leaves)[0];
            worst_ad = std::max(worst_ad, testing::relative_error(analytic, autodiff));

            const auto f = [&](const Tensor& p) { return reward_eval({p.data(), 2}, c, spec); };
            worst_fd = std::max(worst_fd, testing::relative_error(analytic, testing::central_difference(f, x, 1e-5)));
        }
        CHECK(worst_ad <= 1e-10);
        CHECK(worst_fd <= 1e-7);
    }
}

TEST_CASE("reward batch forms agree with pointwise evaluation") {
    const RewardSpec spec = two_targets(RewardFamily::composite);
    const Tensor x = Tensor::from_rows({{0.3, -1.0}, {2.0, 2.5}, {-4.0, 0.1}});
    const std::vector<std::size_t> cond = {1, 0, 1};
    const Tensor r = reward_batch(x, cond, spec), g = reward_grad_batch(x, cond, spec);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(r[i] == reward_eval({x.data() + 2 * i, 2}, cond[i], spec));
        const auto gi = reward_grad({x.data() + 2 * i, 2}, cond[i], spec);
        CHECK(g.at(i, 0) == gi[0]);
        CHECK(g.at(i, 1) == gi[1]);
    }
}

TEST_CASE("grid geometry") {
    const GridSpec g;
    CHECK(g.cell_width() == 10.0 / 256.0);
    CHECK(g.cell_of(-5.0, -5.0) == 0);
    CHECK(g.cell_of(4.999, 4.999) == 256 * 256 - 1);
    CHECK(g.cell_of(5.0, 0.0) == -1);
    CHECK(g.cell_of(0.0, -5.1) == -1);
    CHECK(g.cell_of(g.center(10), g.center(200)) == 10 * 256 + 200);
}

TEST_CASE("tilted target oracle") {
    const GridSpec grid;
    const std::size_t res = grid.resolution;
    const double tau = 1.0;
    const GridDensity base = gaussian_density(0.0, 0.0, tau);

    SUBCASE("zero reward reproduces the base grid") {
        const auto plain = tilted_target(base, 1, nullptr, grid);
        double total = 0.0, worst = 0.0;
        for (std::size_t i = 0; i < res; ++i)
            for (std::size_t j = 0; j < res; ++j) {
                const double b = base(0, grid.center(i), grid.center(j));
                worst = std::max(worst, std::abs(plain.density(0, i, j) - b / plain.normalizer[0]));
                total += plain.mass[0][i * res + j];
            }
        CHECK(worst <= 1e-12);
        CHECK(std::abs(total - 1.0) <= 1e-9);

        // A reward that is identically zero through the reward path.
        RewardSpec zero = spec_with(RewardFamily::composite, Tensor::from_rows({{1.0, 1.0}}));
        zero.pull_weight = 0.0;
        zero.annulus_weight = 0.0;
        const auto tilted = tilted_target(base, 1, &zero, grid);
        double dev = 0.0;
        for (std::size_t k = 0; k < res * res; ++k) dev = std::max(dev, std::abs(tilted.mass[0][k] - plain.mass[0][k]));
        CHECK(dev <= 1e-12);
    }

    SUBCASE("conjugate Gaussian closed form") {
        const double mu[2] = {1.0, -0.5}, gamma = 0.5;
        const RewardSpec spec = spec_with(RewardFamily::mode_pull, Tensor::from_rows({{mu[0], mu[1]}}), gamma);
        const auto tilted = tilted_target(base, 1, &spec, grid);
        const double k = 2.0 * tau * tau / gamma;
        const GridDensity closed = gaussian_density(mu[0] * k / (1.0 + k), mu[1] * k / (1.0 + k), tau / std::sqrt(1.0 + k));
        double worst = 0.0, total = 0.0;
        for (std::size_t i = 0; i < res; ++i)
            for (std::size_t j = 0; j < res; ++j) {
                worst = std::max(worst, std::abs(tilted.density(0, i, j) - closed(0, grid.center(i), grid.center(j))));
                total += tilted.mass[0][i * res + j];
                CHECK(tilted.mass[0][i * res + j] >= 0.0);
            }
        CHECK(worst <= 1e-6);
        CHECK(std::abs(total - 1.0) <= 1e-9);
        const auto m = tilted.mean(0);
        CHECK(m[0] == doctest::Approx(mu[0] * k / (1.0 + k)).epsilon(1e-9));
        CHECK(m[1] == doctest::Approx(mu[1] * k / (1.0 + k)).epsilon(1e-9));
    }

    SUBCASE("large gamma approaches the base") {
        const RewardSpec spec = spec_with(RewardFamily::mode_pull, Tensor::from_rows({{1.0, -0.5}}), 1e6);
        const auto plain = tilted_target(base, 1, nullptr, grid);
        const auto tilted = tilted_target(base, 1, &spec, grid);
        double worst = 0.0;
        for (std::size_t i = 0; i < res; ++i)
            for (std::size_t j = 0; j < res; ++j)
                worst = std::max(worst, std::abs(tilted.density(0, i, j) - plain.density(0, i, j)));
        CHECK(worst <= 1e-4);
    }

    SUBCASE("monotone in reward at equal base density") {
        // Base N(0, I) is symmetric under mirroring either axis, so mirrored
        // cells carry bitwise-equal base density.
        const RewardSpec spec = spec_with(RewardFamily::composite, Tensor::from_rows({{1.0, -0.5}}));
        const auto tilted = tilted_target(base, 1, &spec, grid);
        RngStream rng(3);
        for (int k = 0; k < 2000; ++k) {
            const std::size_t i = rng.index(res), j = rng.index(res), mi = res - 1 - i;
            const double a[] = {grid.center(i), grid.center(j)}, b[] = {grid.center(mi), grid.center(j)};
            REQUIRE(base(0, a[0], a[1]) == base(0, b[0], b[1]));
            if (reward_eval(a, 0, spec) >= reward_eval(b, 0, spec)) {
                CHECK(tilted.mass[0][i * res + j] >= tilted.mass[0][mi * res + j]);
            }
        }
    }

    SUBCASE("support is preserved") {
        const GridDensity half = [&](std::size_t c, double x, double y) { return x < 0.0 ? 2.0 * base(c, x, y) : 0.0; };
        const RewardSpec spec = spec_with(RewardFamily::mode_pull, Tensor::from_rows({{1.0, 1.0}}));
        const auto tilted = tilted_target(half, 1, &spec, grid);
        for (std::size_t i = res / 2; i < res; ++i)
            for (std::size_t j = 0; j < res; ++j) CHECK(tilted.mass[0][i * res + j] == 0.0);
    }

    SUBCASE("errors") {
        const GridDensity wide = gaussian_density(0.0, 0.0, 3.0);
        CHECK_THROWS_WITH_AS(tilted_target(wide, 1, nullptr, grid), doctest::Contains("base mass"),
                             std::invalid_argument);
        RewardSpec hot = spec_with(RewardFamily::composite, Tensor::from_rows({{0.0, 0.0}}), 0.05);
        hot.pull_weight = -1.0;  // unbounded above: R/gamma reaches ~990 at the corners
        hot.annulus_weight = 0.0;
        try {
            tilted_target(base, 1, &hot, grid);
            FAIL("expected TiltOverflowError");
        } catch (const TiltOverflowError& e) {
            const double corner = (grid.center(0) * grid.center(0)) * 2.0 / 0.05;
            CHECK(e.max_ratio() == doctest::Approx(corner));
        }
    }
}

TEST_CASE("tilted grid helpers") {
    const GridSpec grid{-3.0, 3.0, 64};
    const auto mixture = default_mixture();
    const RewardSpec spec = default_reward(mixture);
    CHECK(spec.targets.at(0, 0) == 0.5 * mixture.modes.at(0, 0));
    const auto t = tilted_target(mixture_density(mixture), mixture.num_conditions(), &spec, grid);

    RngStream rng(8);
    const Tensor s = t.sample(1, 20000, rng);
    double mx = 0.0;
    for (std::size_t i = 0; i < s.dim(0); ++i) {
        CHECK(grid.contains(s.at(i, 0), s.at(i, 1)));
        mx += s.at(i, 0);
    }
    mx /= static_cast<double>(s.dim(0));
    CHECK(std::abs(mx - t.mean(1)[0]) < 0.02);

    const auto path = std::filesystem::temp_directory_path() / "hyperalign_tilt.csv";
    t.write_csv(path);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "cond,x,y,density");
    std::size_t lines = 0;
    for (std::string line; std::getline(in, line);) ++lines;
    CHECK(lines == 4 * 64 * 64);
    std::filesystem::remove(path);
}

TEST_CASE("preference set") {
    const auto mixture = default_mixture();
    const RewardSpec spec = default_reward(mixture);
    const GridSpec grid;
    const PointSampler base = [&](std::size_t c, RngStream& s) {
        const Tensor x = sample_mixture_component(mixture, c, 1, s);
        return std::vector<double>(x.data(), x.data() + 2);
    };

    SUBCASE("mean matches the tilted grid within 4 sigma") {
        RngStream rng(12);
        const std::size_t n = 10000;
        const auto prefs = gen_preference_set(base, spec, grid, n, 2000000, std::vector<double>(100, 1.0), rng);
        CHECK_NOTHROW(prefs.validate(4));
        const auto target = tilted_target(mixture_density(mixture), 4, &spec, grid);
        for (std::size_t c = 0; c < 4; ++c) {
            const auto rows = prefs.samples.with_condition(c);
            REQUIRE(rows.size() == n);
            const auto m = target.mean(c);
            for (std::size_t j = 0; j < 2; ++j) {
                double var = 0.0;
                for (std::size_t i = 0; i < grid.resolution; ++i)
                    for (std::size_t k = 0; k < grid.resolution; ++k) {
                        const double v = (j == 0 ? grid.center(i) : grid.center(k)) - m[j];
                        var += target.mass[c][i * grid.resolution + k] * v * v;
                    }
                double mean = 0.0;
                for (std::size_t i = 0; i < n; ++i) mean += rows.x0.at(i, j);
                mean /= static_cast<double>(n);
                CHECK(std::abs(mean - m[j]) <= 4.0 * std::sqrt(var / static_cast<double>(n)));
            }
        }
        for (std::size_t i = 0; i < prefs.samples.size(); ++i) {
            CHECK(std::isfinite(prefs.samples.x0.at(i, 0)));
            CHECK(grid.contains(prefs.samples.x0.at(i, 0), prefs.samples.x0.at(i, 1)));
        }
    }

    SUBCASE("zero reward accepts every in-grid draw") {
        RewardSpec zero = spec;
        zero.family = RewardFamily::composite;
        zero.pull_weight = zero.annulus_weight = 0.0;
        RngStream a(5);
        const auto prefs = gen_preference_set(base, zero, grid, 50, 50, {}, a);
        // Same per-condition streams, plain draws: identical points.
        for (std::size_t c = 0; c < 4; ++c) {
            RngStream s = a.fork(c);
            const auto rows = prefs.samples.with_condition(c);
            for (std::size_t i = 0; i < 50; ++i) {
                const auto x = base(c, s);
                s.uniform();
                CHECK(rows.x0.at(i, 0) == x[0]);
                CHECK(rows.x0.at(i, 1) == x[1]);
            }
        }
    }

    SUBCASE("acceptance failures") {
        RewardSpec cold = spec;
        cold.gamma = 0.05;  // acceptance ~ 1e-7
        RngStream rng(1);
        CHECK_THROWS_WITH_AS(gen_preference_set(base, cold, grid, 10, 100000, {}, rng), doctest::Contains("gamma"),
                             AcceptanceError);
        CHECK_THROWS_AS(gen_preference_set(base, spec, grid, 100, 200, {}, rng), AcceptanceError);
        CHECK_THROWS_AS(gen_preference_set(base, spec, grid, 100, 50, {}, rng), std::invalid_argument);
    }

    SUBCASE("validation") {
        PreferenceSet p;
        p.samples.x0 = Tensor::from_rows({{0.0, 0.0}});
        p.samples.cond = {0};
        p.eta = {1.0, -1.0};
        CHECK_THROWS_AS(p.validate(1), std::invalid_argument);
        p.eta = {1.0, 0.0};
        CHECK_NOTHROW(p.validate(1));
        CHECK_THROWS_AS(p.validate(2), std::invalid_argument);
    }
}
