#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace rpq {

// mt19937_64 output is pinned by the standard, so seeded runs reproduce
// bit-identically across standard libraries. The distributions below are
// hand-rolled because std:: distribution implementations are not.
using Rng = std::mt19937_64;

namespace rng {

inline double uniform(Rng& g) {
    // 53-bit mantissa uniform in [0, 1)
    return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

inline double uniform_open(Rng& g) {
    // (0, 1): shift the lattice half a step away from both endpoints
    return (static_cast<double>(g() >> 11) + 0.5) * 0x1.0p-53;
}

inline std::uint64_t below(Rng& g, std::uint64_t n) {
    // Lemire's multiply-shift; bias is negligible for our ranges
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(g()) * n) >> 64);
}

inline double normal(Rng& g) {
    // Box-Muller, one variate per call
    const double u = uniform_open(g);
    const double v = uniform_open(g);
    return std::sqrt(-2.0 * std::log(u)) * std::cos(6.283185307179586477 * v);
}

inline double gumbel(Rng& g) {
    return -std::log(-std::log(uniform_open(g)));
}

// Independent stream seeds derived from one master seed (splitmix64).
inline std::uint64_t derive(std::uint64_t seed, std::uint64_t tag) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (tag + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

} // namespace rng
} // namespace rpq
