// SPDX-License-Identifier: Apache-2.0
//
// Binary tensor encoding shared by all checkpoint kinds:
//   u32 rank, u32 extents[rank], f64 values[prod(extents)]
// all little-endian.
#pragma once

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include "hyperalign/tensor.hpp"

namespace hyperalign {

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

std::string encode_tensor(const Tensor& t);

/// 64-bit FNV-1a digest, rendered as 16 hex digits by `hex_digest`.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ull);
std::string hex_digest(std::uint64_t h);

}  // namespace hyperalign
