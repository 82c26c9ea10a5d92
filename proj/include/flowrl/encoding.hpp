/// @file encoding.hpp
/// @brief Byte encodings used by file formats and the judge wire protocol.

#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace flowrl {

std::string base64_encode(std::span<const unsigned char> bytes);
std::vector<unsigned char> base64_decode(std::string_view text);

/// Little-endian float64 bytes of @p values, base64 encoded.
std::string base64_f64(std::span<const double> values);
std::vector<double> decode_base64_f64(std::string_view text);

std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace flowrl
