#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace neardgd::rng {

// splitmix64 finalizer; used to derive independent substream keys.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(const char* s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (; *s; ++s) h = (h ^ static_cast<std::uint64_t>(*s)) * 0x100000001b3ull;
    return h;
}

// Substream key from a seed and any number of integer components. Keys are
// position-sensitive, so derive(s, 1, 2) != derive(s, 2, 1).
template <class... Keys>
constexpr std::uint64_t derive(std::uint64_t seed, Keys... keys) {
    std::uint64_t h = splitmix64(seed ^ 0x6a09e667f3bcc908ull);
    ((h = splitmix64(h ^ static_cast<std::uint64_t>(keys))), ...);
    return h;
}

inline std::mt19937_64 engine(std::uint64_t key) { return std::mt19937_64(key); }

// Draws below avoid std::*_distribution, whose output sequences are
// implementation-defined; mt19937_64 itself is pinned by the standard.

inline double uniform01(std::mt19937_64& g) {
    return static_cast<double>(g() >> 11) * 0x1.0p-53;  // [0, 1)
}

// Unbiased integer in [0, n) by rejection.
inline std::size_t uniform_index(std::mt19937_64& g, std::size_t n) {
    const std::uint64_t nn = static_cast<std::uint64_t>(n);
    const std::uint64_t reject_below = (0ull - nn) % nn;  // 2^64 mod n
    std::uint64_t r = g();
    while (r < reject_below) r = g();
    return static_cast<std::size_t>(r % nn);
}

// Standard normal via Box-Muller (cosine branch). Two uniforms per draw,
// no cached state, so streams stay aligned across call patterns.
inline double normal(std::mt19937_64& g) {
    constexpr double two_pi = 6.28318530717958647692;
    const double u1 = 1.0 - uniform01(g);  // (0, 1]
    const double u2 = uniform01(g);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

}  // namespace neardgd::rng
