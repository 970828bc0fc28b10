// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <functional>
#include <sstream>

#include "hyperalign/adam.hpp"
#include "hyperalign/autodiff.hpp"
#include "hyperalign/rng.hpp"
#include "hyperalign/serialize.hpp"
#include "gradient_suite.hpp"
#include "support.hpp"

using namespace hyperalign;
using namespace hyperalign::testing;

TEST_CASE("primitive values") {
    Tape tape;
    SUBCASE("identity matmul") {
        RngStream rng(3);
        const Tensor A = rng.gaussian({3, 5});
        Tensor I({3, 3});
        for (std::size_t i = 0; i < 3; ++i) I.at(i, i) = 1.0;
        CHECK(ad::matmul(tape.constant(I), tape.constant(A)).value() == A);
    }
    SUBCASE("softmax of zeros is uniform") {
        const Tensor y = ad::softmax_last(tape.constant(Tensor({7}))).value();
        for (double v : y.values()) CHECK(v == doctest::Approx(1.0 / 7.0).epsilon(1e-15));
    }
    SUBCASE("sum of halves") { CHECK(ad::sum(tape.constant(Tensor({4, 5}, 0.5))).value().item() == 10.0); }
    SUBCASE("broadcast add of a bias row") {
        const Var x = tape.constant(Tensor({2, 3}, 1.0));
        const Var b = tape.constant(Tensor({3}, std::vector<double>{1, 2, 3}));
        const Tensor y = (x + b).value();
        CHECK(y.shape() == Shape{2, 3});
        CHECK(y.at(1, 2) == 4.0);
    }
}

TEST_CASE("shape errors name both shapes") {
    Tape tape;
    const Var a = tape.constant(Tensor({2, 3}));
    const Var b = tape.constant(Tensor({4, 5}));
    try {
        ad::matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("(2,3)") != std::string::npos);
        CHECK(msg.find("(4,5)") != std::string::npos);
    }
    CHECK_THROWS_AS(ad::add(a, b), ShapeError);
}

TEST_CASE("backward basics") {
    SUBCASE("x*x at 3") {
        Tape tape;
        const Var x = tape.param(Tensor::scalar(3.0));
        const Var y = x * x;
        const Var leaves[] = {x};
        CHECK(tape.gradient(y, leaves)[0].item() == 6.0);
    }
    SUBCASE("sum(Wx) wrt W is a broadcast of x") {
        Tape tape;
        RngStream rng(1);
        const Var W = tape.param(rng.gaussian({4, 3}));
        const Tensor xv = rng.gaussian({3, 1});
        const Var y = ad::sum(ad::matmul(W, tape.constant(xv)));
        const Var leaves[] = {W};
        const Tensor g = tape.gradient(y, leaves)[0];
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 3; ++j) CHECK(g.at(i, j) == xv[j]);
    }
    SUBCASE("unused leaf gets zero, non-scalar output rejected") {
        Tape tape;
        const Var a = tape.param(Tensor({2}, 1.0));
        const Var unused = tape.param(Tensor({3}, 1.0));
        const Var y = ad::sum(a * a);
        const Var leaves[] = {a, unused};
        const auto g = tape.gradient(y, leaves);
        CHECK(g[1] == Tensor({3}));
        CHECK_THROWS_AS(tape.gradient(a * a, leaves), ShapeError);
    }
}

TEST_CASE("gradient suite: 20 random graphs against central differences") {
    for (std::uint64_t s = 0; s < 20; ++s) {
        CAPTURE(s);
        RngStream rng(1000 + s);
        const Tensor x = rng.gaussian({3, 4});
        CHECK(fd_relative_error(random_graph(s), x) <= 1e-5);
    }
}

TEST_CASE("every primitive matches finite differences at 100 points with |x| <= 10") {
    RngStream wr(77);
    const Tensor w = wr.gaussian({2, 3});
    const Tensor m = wr.gaussian({3, 3});
    const Tensor table = wr.gaussian({4, 3});
    const std::size_t idx[] = {2, 0, 2};
    auto weighted = [&](std::function<Var(Tape&, const Var&)> op) -> Graph {
        return [=](Tape& t, const Var& x) {
            const Var y = op(t, x);
            return ad::sum(y * t.constant(Tensor(y.shape(), std::vector<double>(w.values().begin(),
                                                                                 w.values().begin() + static_cast<std::ptrdiff_t>(y.value().size())))));
        };
    };
    const std::vector<std::pair<const char*, Graph>> prims = {
        {"add", weighted([&](Tape& t, const Var& x) { return x + t.constant(m.rows(0, 2)); })},
        {"sub", weighted([&](Tape& t, const Var& x) { return t.constant(m.rows(0, 2)) - x; })},
        {"mul", weighted([](Tape&, const Var& x) { return x * x; })},
        {"div", weighted([](Tape&, const Var& x) { return x / ad::add_scalar(ad::square(x), 1.0); })},
        {"scale", weighted([](Tape&, const Var& x) { return x * -2.5; })},
        {"matmul", weighted([&](Tape& t, const Var& x) { return ad::matmul(x, t.constant(m)); })},
        {"tanh", weighted([](Tape&, const Var& x) { return ad::tanh(x * 0.3); })},
        {"gelu", weighted([](Tape&, const Var& x) { return ad::gelu(x); })},
        {"exp", weighted([](Tape&, const Var& x) { return ad::exp(x * 0.2); })},
        {"sqrt", weighted([](Tape&, const Var& x) { return ad::sqrt(ad::add_scalar(ad::square(x), 0.5)); })},
        {"softmax", weighted([](Tape&, const Var& x) { return ad::softmax_last(x * 0.5); })},
        {"sum_last", [](Tape&, const Var& x) { return ad::sum(ad::square(ad::sum_last(x))); }},
        {"concat", weighted([](Tape&, const Var& x) {
             const Var parts[] = {ad::slice_last(x, 1, 3), ad::slice_last(x, 0, 1)};
             return ad::concat_last(parts) * x;
         })},
        {"transpose", [&](Tape& t, const Var& x) {
             return ad::sum(ad::square(ad::matmul(ad::transpose_last(x), t.constant(m.rows(0, 2)))) * 0.1);
         }},
        {"gather", [&](Tape& t, const Var& x) {
             const Var tab = ad::reshape(ad::concat_last(std::vector<Var>{x, x}), {4, 3});
             return ad::sum(ad::square(ad::gather_rows(tab, idx)) * t.constant(Tensor({3, 3}, 0.3)));
         }},
    };
    for (const auto& [name, g] : prims) {
        CAPTURE(name);
        RngStream rng(std::hash<std::string>{}(name));
        double worst = 0.0;
        for (int k = 0; k < 100; ++k) {
            Tensor x({2, 3});
            for (auto& v : x.values()) v = 20.0 * rng.uniform() - 10.0;
            worst = std::max(worst, fd_relative_error(g, x));
        }
        CHECK(worst <= 1e-5);
    }
}

TEST_CASE("backward is linear") {
    RngStream rng(5);
    const Tensor x0 = rng.gaussian({3, 4});
    const Graph f = random_graph(3), g = random_graph(7);
    const double alpha = 0.7, beta = -1.3;
    const Graph combo = [&](Tape& t, const Var& x) { return f(t, x) * alpha + g(t, x) * beta; };
    const Tensor lhs = gradient_of(combo, x0);
    const Tensor gf = gradient_of(f, x0), gg = gradient_of(g, x0);
    for (std::size_t i = 0; i < lhs.size(); ++i) CHECK(std::abs(lhs[i] - (alpha * gf[i] + beta * gg[i])) <= 1e-12);
}

TEST_CASE("forward passes are bitwise reproducible") {
    RngStream rng(9);
    const Tensor x = rng.gaussian({3, 4});
    for (std::uint64_t s = 0; s < 20; ++s) {
        Tape t1, t2;
        const Graph g = random_graph(s);
        const Tensor a = g(t1, t1.constant(x)).value();
        const Tensor b = g(t2, t2.constant(x)).value();
        CHECK(bitwise_equal(a, b));
    }
}

TEST_CASE("gaussian streams") {
    SUBCASE("determinism and counter advance") {
        RngStream a(42, 7), b(42, 7);
        const Tensor ta = a.gaussian({10, 3});
        CHECK(bitwise_equal(ta, b.gaussian({10, 3})));
        CHECK(a.counter() == 37);
    }
    SUBCASE("distinct seeds differ almost everywhere") {
        RngStream a(1), b(2);
        const Tensor ta = a.gaussian({10000}), tb = b.gaussian({10000});
        std::size_t differ = 0;
        for (std::size_t i = 0; i < ta.size(); ++i) differ += ta[i] != tb[i];
        CHECK(differ >= 9900);
    }
    SUBCASE("moments of a million draws") {
        RngStream a(2024);
        const Tensor t = a.gaussian({1000000});
        double mean = 0.0;
        for (double v : t.values()) mean += v;
        mean /= 1e6;
        double var = 0.0;
        for (double v : t.values()) var += (v - mean) * (v - mean);
        var /= 1e6 - 1.0;
        CHECK(std::abs(mean) <= 4.0 / std::sqrt(1e6));
        CHECK(std::abs(var - 1.0) <= 0.01);
    }
    SUBCASE("empty shape rejected") {
        RngStream a(1);
        CHECK_THROWS_AS(a.gaussian({}), ShapeError);
    }
}

TEST_CASE("tensor serialization layout and round trip") {
    const Tensor t({2}, std::vector<double>{1.0, -2.0});
    const std::string bytes = encode_tensor(t);
    REQUIRE(bytes.size() == 4 + 4 + 16);
    CHECK(static_cast<unsigned char>(bytes[0]) == 1);  // rank, little-endian
    CHECK(static_cast<unsigned char>(bytes[4]) == 2);  // extent
    CHECK(static_cast<unsigned char>(bytes[15]) == 0x3f);  // 1.0 high byte
    RngStream rng(11);
    for (int k = 0; k < 25; ++k) {
        Shape s;
        const std::size_t r = rng.index(4);
        for (std::size_t i = 0; i < r; ++i) s.push_back(1 + rng.index(5));
        Tensor x(s);
        for (auto& v : x.values()) v = rng.normal() * 1e3;
        std::istringstream in(encode_tensor(x));
        CHECK(bitwise_equal(read_tensor(in), x));
    }
    std::istringstream truncated(bytes.substr(0, 10));
    CHECK_THROWS_AS(read_tensor(truncated), FormatError);
}

TEST_CASE("adam minimizes a quadratic") {
    Tensor p({3}, std::vector<double>{3.0, -2.0, 1.0});
    Adam opt({&p}, AdamConfig{0.05});
    for (int i = 0; i < 2000; ++i) {
        Tensor g(p.shape());
        for (std::size_t k = 0; k < 3; ++k) g[k] = 2.0 * (p[k] - static_cast<double>(k));
        opt.step(std::vector<Tensor>{g});
    }
    for (std::size_t k = 0; k < 3; ++k) CHECK(p[k] == doctest::Approx(static_cast<double>(k)).epsilon(1e-3));
}
