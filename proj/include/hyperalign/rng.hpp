// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "hyperalign/tensor.hpp"

namespace hyperalign {

/// Counter-based random source: every draw is a pure function of
/// (seed, counter), so a stream can be replayed from its header alone.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed = 0, std::uint64_t counter = 0) : seed_(seed), counter_(counter) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t counter() const { return counter_; }

    /// Independent child stream keyed by `key`; the parent is not advanced.
    RngStream fork(std::uint64_t key) const;

    std::uint64_t next_u64();
    /// Uniform in the open interval (0, 1).
    double uniform();
    /// Standard normal; consumes one counter value.
    double normal();
    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n);

    /// I.i.d. standard normal tensor; advances the counter by its size.
    Tensor gaussian(const Shape& shape);

    bool operator==(const RngStream&) const = default;

private:
    std::uint64_t seed_;
    std::uint64_t counter_;
};

/// SplitMix64 finalizer; the mixing function behind RngStream.
std::uint64_t mix64(std::uint64_t x);

}  // namespace hyperalign
