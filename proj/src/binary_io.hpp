// Little-endian raw array helpers shared by checkpoints and dataset files.

#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "flowrl/errors.hpp"

namespace flowrl::detail {

template <typename Float, typename Bits>
inline void write_le(std::ostream& os, std::span<const Float> values) {
    static_assert(sizeof(Float) == sizeof(Bits));
    std::vector<unsigned char> buf(values.size() * sizeof(Float));
    for (std::size_t i = 0; i < values.size(); ++i) {
        Bits bits = std::bit_cast<Bits>(values[i]);
        for (std::size_t b = 0; b < sizeof(Bits); ++b) {
            buf[i * sizeof(Bits) + b] = static_cast<unsigned char>((bits >> (8 * b)) & 0xffu);
        }
    }
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!os) throw DataError("write failed");
}

template <typename Float, typename Bits>
inline void read_le(std::istream& is, std::span<Float> out) {
    std::vector<unsigned char> buf(out.size() * sizeof(Float));
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (is.gcount() != static_cast<std::streamsize>(buf.size())) {
        throw DataError("unexpected end of file while reading " + std::to_string(out.size()) +
                        " values");
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
        Bits bits = 0;
        for (std::size_t b = 0; b < sizeof(Bits); ++b) {
            bits |= static_cast<Bits>(buf[i * sizeof(Bits) + b]) << (8 * b);
        }
        out[i] = std::bit_cast<Float>(bits);
    }
}

inline void write_f64(std::ostream& os, std::span<const double> v) { write_le<double, std::uint64_t>(os, v); }
inline void read_f64(std::istream& is, std::span<double> v) { read_le<double, std::uint64_t>(is, v); }
inline void write_f32(std::ostream& os, std::span<const float> v) { write_le<float, std::uint32_t>(os, v); }
inline void read_f32(std::istream& is, std::span<float> v) { read_le<float, std::uint32_t>(is, v); }

}  // namespace flowrl::detail
