// SPDX-License-Identifier: Apache-2.0
#include "hyperalign/rng.hpp"

#include <cmath>
#include <numbers>

namespace hyperalign {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;

std::uint64_t draw(std::uint64_t seed, std::uint64_t counter, std::uint64_t lane) {
    return mix64(mix64(seed ^ kGolden) + mix64(counter * 2 + lane + kGolden));
}

double to_open_unit(std::uint64_t bits) {
    // 53 random mantissa bits, shifted by half an ulp so 0 and 1 never occur.
    return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace

std::uint64_t mix64(std::uint64_t x) {
    x += kGolden;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

RngStream RngStream::fork(std::uint64_t key) const { return RngStream(mix64(seed_ ^ mix64(key + 0x632BE59BD9B4E019ull))); }

std::uint64_t RngStream::next_u64() { return draw(seed_, counter_++, 0); }

double RngStream::uniform() { return to_open_unit(next_u64()); }

double RngStream::normal() {
    const std::uint64_t c = counter_++;
    const double u1 = to_open_unit(draw(seed_, c, 0));
    const double u2 = to_open_unit(draw(seed_, c, 1));
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t RngStream::index(std::size_t n) {
    if (n == 0) throw std::invalid_argument("RngStream::index with n = 0");
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
}

Tensor RngStream::gaussian(const Shape& shape) {
    if (shape.empty()) throw ShapeError("gaussian: shape must be nonempty");
    Tensor t(shape);
    for (auto& v : t.values()) v = normal();
    return t;
}

}  // namespace hyperalign
