#pragma once

#include <cstdint>
#include <random>

namespace dpn {

// std::mt19937_64 output is fully specified by the standard, unlike the
// std:: distributions, so draws are mapped to ranges by hand here.
using Rng = std::mt19937_64;

inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) { return n ? rng() % n : 0; }

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Deterministic lattice hash of integer coordinates to [0, 1).
constexpr double hash01(std::uint64_t seed, std::int64_t x, std::int64_t y) {
    std::uint64_t h = mix64(seed);
    h = mix64(h ^ static_cast<std::uint64_t>(x));
    h = mix64(h ^ static_cast<std::uint64_t>(y));
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

} // namespace dpn
