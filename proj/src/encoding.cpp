#include "flowrl/encoding.hpp"

#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "binary_io.hpp"
#include "flowrl/errors.hpp"

namespace flowrl {

std::string base64_encode(std::span<const unsigned char> bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                  static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

std::vector<unsigned char> base64_decode(std::string_view text) {
    if (text.size() % 4 != 0) throw DataError("base64 input length is not a multiple of 4");
    std::vector<unsigned char> out(3 * text.size() / 4);
    const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                  static_cast<int>(text.size()));
    if (n < 0) throw DataError("invalid base64 input");
    std::size_t len = static_cast<std::size_t>(n);
    // EVP_DecodeBlock keeps the zero bytes that stand in for padding.
    if (!text.empty() && text.back() == '=') --len;
    if (text.size() >= 2 && text[text.size() - 2] == '=') --len;
    out.resize(len);
    return out;
}

std::string base64_f64(std::span<const double> values) {
    std::ostringstream os(std::ios::binary);
    detail::write_f64(os, values);
    const std::string raw = os.str();
    return base64_encode(
        std::span(reinterpret_cast<const unsigned char*>(raw.data()), raw.size()));
}

std::vector<double> decode_base64_f64(std::string_view text) {
    const auto bytes = base64_decode(text);
    if (bytes.size() % 8 != 0) throw DataError("float64 payload has a partial value");
    std::istringstream is(std::string(bytes.begin(), bytes.end()), std::ios::binary);
    std::vector<double> out(bytes.size() / 8);
    detail::read_f64(is, out);
    return out;
}

std::string sha256_hex(std::span<const unsigned char> bytes) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1) {
        throw Error("sha256 digest failed");
    }
    std::string hex;
    hex.reserve(2 * len);
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(buf, sizeof buf, "%02x", md[i]);
        hex += buf;
    }
    return hex;
}

std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path.string());
    const std::string content((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return sha256_hex(
        std::span(reinterpret_cast<const unsigned char*>(content.data()), content.size()));
}

}  // namespace flowrl
