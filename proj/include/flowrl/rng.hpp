/// @file rng.hpp
/// @brief Seeded random streams. Every stochastic draw in flowrl goes through
/// an Rng whose seed is derived from (run seed, stream indices), so any
/// sample can be replayed independently of thread scheduling.

#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>

namespace flowrl {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Folds stream indices into a base seed.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> ids) noexcept {
    std::uint64_t s = mix64(base);
    for (std::uint64_t id : ids) s = mix64(s ^ mix64(id + 0x632be59bd9b4e019ULL));
    return s;
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double normal() { return normal_(engine_); }
    double uniform() { return uniform_(engine_); }
    /// Uniform integer in [lo, hi].
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
    }
    void fill_normal(std::span<double> out) {
        for (double& v : out) v = normal_(engine_);
    }
    std::mt19937_64& engine() noexcept { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace flowrl
