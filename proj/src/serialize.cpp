// SPDX-License-Identifier: Apache-2.0
#include "hyperalign/serialize.hpp"

#include <bit>
#include <cstring>
#include <iomanip>
#include <sstream>

namespace hyperalign {

namespace {

template <typename T>
void put_le(std::ostream& os, T v) {
    unsigned char buf[sizeof(T)];
    std::uint64_t bits = 0;
    if constexpr (std::is_same_v<T, double>) {
        bits = std::bit_cast<std::uint64_t>(v);
    } else {
        bits = static_cast<std::uint64_t>(v);
    }
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<unsigned char>(bits >> (8 * i));
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
    unsigned char buf[sizeof(T)];
    if (!is.read(reinterpret_cast<char*>(buf), sizeof(T))) throw FormatError("truncated tensor payload");
    std::uint64_t bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    if constexpr (std::is_same_v<T, double>) {
        return std::bit_cast<double>(bits);
    } else {
        return static_cast<T>(bits);
    }
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) put_le<std::uint32_t>(os, static_cast<std::uint32_t>(e));
    for (double v : t.values()) put_le<double>(os, v);
}

Tensor read_tensor(std::istream& is) {
    const auto rank = get_le<std::uint32_t>(is);
    if (rank > 8) throw FormatError("implausible tensor rank " + std::to_string(rank));
    Shape shape(rank);
    for (auto& e : shape) e = get_le<std::uint32_t>(is);
    const std::size_t n = shape_numel(shape);
    if (n > (std::size_t{1} << 32)) throw FormatError("implausible tensor size " + shape_str(shape));
    std::vector<double> values(n);
    for (auto& v : values) v = get_le<double>(is);
    return Tensor(std::move(shape), std::move(values));
}

std::string encode_tensor(const Tensor& t) {
    std::ostringstream os(std::ios::binary);
    write_tensor(os, t);
    return os.str();
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis) {
    std::uint64_t h = basis;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string hex_digest(std::uint64_t h) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

}  // namespace hyperalign
