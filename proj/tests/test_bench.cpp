// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <limits>

#include "hyperalign/bench.hpp"
#include "hyperalign/training.hpp"

using namespace hyperalign;

namespace {

const ExperimentConfig& config() {
    static const ExperimentConfig c =
        parse_config(nlohmann::json{{"seed", 3}, {"bench", {{"reference_per_condition", 400}, {"projections", 32}}}});
    return c;
}

const EvalReference& reference() {
    static const EvalReference r = make_reference(config());
    return r;
}

// n points per condition drawn from the data, rows ordered by condition.
Tensor data_samples(std::size_t n, std::vector<std::size_t>& cond) {
    const auto& cfg = config();
    RngStream rng(17);
    const std::size_t K = cfg.mixture.num_conditions();
    Tensor out({n * K, 2});
    cond.clear();
    for (std::size_t c = 0; c < K; ++c) {
        const Tensor x = sample_mixture_component(cfg.mixture, c, n, rng);
        for (std::size_t i = 0; i < n; ++i) {
            out.at(c * n + i, 0) = x.at(i, 0);
            out.at(c * n + i, 1) = x.at(i, 1);
            cond.push_back(c);
        }
    }
    return out;
}

double brute_diversity(const Tensor& x) {
    double s = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < x.dim(0); ++i)
        for (std::size_t j = i + 1; j < x.dim(0); ++j, ++pairs)
            s += std::hypot(x.at(i, 0) - x.at(j, 0), x.at(i, 1) - x.at(j, 1));
    return s / static_cast<double>(pairs);
}

}  // namespace

TEST_CASE("data samples score finite and close to the data") {
    std::vector<std::size_t> cond;
    const Tensor x = data_samples(1000, cond);
    const auto rec = score_samples("base", x, cond, config().reward, reference(), 3);
    REQUIRE(rec.size() == 5);
    CHECK(rec.back().condition == "all");
    CHECK(rec.back().samples == 4000);
    for (std::size_t c = 0; c < 4; ++c) {
        CHECK(rec[c].condition == std::to_string(c));
        CHECK(rec[c].kl_base < 1.0);  // plug-in bias of 1000 samples on the fine grid is about 0.7
        CHECK(rec[c].kl_base < rec[c].kl_target);
        CHECK(rec[c].sw2_data < 0.1);
    }
    CHECK(rec.back().diversity == doctest::Approx(brute_diversity(x)).epsilon(1e-9));
}

TEST_CASE("pooled diversity sees collapse across conditions") {
    std::vector<std::size_t> cond;
    Tensor x = data_samples(1000, cond);
    const auto spread = score_samples("m", x, cond, config().reward, reference(), 3);
    // Every condition's samples moved onto condition 0's mode: per-condition
    // spread is unchanged, the pooled set loses its modes.
    const auto& modes = config().mixture.modes;
    for (std::size_t i = 0; i < x.dim(0); ++i) {
        x.at(i, 0) += modes.at(0, 0) - modes.at(cond[i], 0);
        x.at(i, 1) += modes.at(0, 1) - modes.at(cond[i], 1);
    }
    const auto collapsed = score_samples("m", x, cond, config().reward, reference(), 3);
    for (std::size_t c = 0; c < 4; ++c) CHECK(collapsed[c].diversity == doctest::Approx(spread[c].diversity));
    CHECK(collapsed.back().diversity < 0.3 * spread.back().diversity);
}

TEST_CASE("samples off the grid or non-finite score as infinite KL") {
    std::vector<std::size_t> cond;
    Tensor x = data_samples(1000, cond);
    for (std::size_t i = 0; i < 100; ++i) x.at(i, 0) = 50.0;  // 10% of condition 0
    x.at(1500, 1) = std::numeric_limits<double>::quiet_NaN();  // condition 1
    const auto rec = score_samples("guided", x, cond, config().reward, reference(), 3);
    CHECK(std::isinf(rec[0].kl_target));
    CHECK(std::isinf(rec[0].kl_base));
    CHECK(std::isfinite(rec[0].sw2_data));
    CHECK(std::isfinite(rec[1].kl_target));  // one point in a thousand is within tolerance
    CHECK(std::isnan(rec[1].sw2_data));
    CHECK(std::isnan(rec[1].diversity));
    CHECK(std::isfinite(rec[2].kl_target));
    CHECK(std::isinf(rec.back().kl_target));
    CHECK(std::isnan(rec.back().diversity));
}
