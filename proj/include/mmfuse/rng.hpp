#pragma once

// Deterministic randomness. Every random artifact in the library (hyperplane
// coefficients, synthetic data, weight init, dropout masks, shuffles) is
// derived from SplitMix64 streams addressed by explicit integer keys, so
// outputs are bitwise reproducible across runs, platforms and thread counts.
// <random> distributions are avoided on purpose: their algorithms differ
// between standard library implementations.

#include <cassert>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <vector>

namespace mmfuse {

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

/// SplitMix64 output function (Steele/Lea/Vigna): bijective avalanche mix.
constexpr std::uint64_t splitmix_finalize(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// One-shot hash of an arbitrary 64-bit value.
constexpr std::uint64_t mix64(std::uint64_t z) {
    return splitmix_finalize(z + kGolden);
}

/// Derives an independent stream key from a seed plus a tag path
/// (module tag, then indices such as row/column). Order-sensitive.
constexpr std::uint64_t stream_key(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t k = mix64(seed);
    for (std::uint64_t t : tags) {
        k = mix64(k ^ (t + kGolden));
    }
    return k;
}

/// n-th output of the SplitMix64 sequence seeded with `key` (counter access).
constexpr std::uint64_t stream_at(std::uint64_t key, std::uint64_t n) {
    return splitmix_finalize(key + (n + 1) * kGolden);
}

/// Maps 64 random bits onto (0, 1] with 53-bit resolution. Never returns 0,
/// so it can feed a logarithm directly.
constexpr double unit_double(std::uint64_t bits) {
    return static_cast<double>((bits >> 11) + 1) * 0x1.0p-53;
}

/// Standard normal deviate: Box-Muller over stream positions 2n and 2n+1.
inline double normal_at(std::uint64_t key, std::uint64_t n) {
    const double u1 = unit_double(stream_at(key, 2 * n));
    const double u2 = unit_double(stream_at(key, 2 * n + 1));
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

/// Sequential SplitMix64 generator for places where a stateful stream is
/// more natural than counter addressing (shuffles, rejection sampling).
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next() {
        state_ += kGolden;
        return splitmix_finalize(state_);
    }

    /// Uniform double in (0, 1].
    double next_unit() { return unit_double(next()); }

private:
    std::uint64_t state_;
};

/// Unbiased uniform draw in [0, n) by rejection. n must be positive.
inline std::uint64_t uniform_below(SplitMix64& g, std::uint64_t n) {
    assert(n > 0);
    const std::uint64_t threshold = (0 - n) % n;  // 2^64 mod n
    for (;;) {
        const std::uint64_t r = g.next();
        if (r >= threshold) return r % n;
    }
}

/// In-place Fisher-Yates shuffle driven by `g`.
template <typename T>
void shuffle(std::vector<T>& v, SplitMix64& g) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(uniform_below(g, i));
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace mmfuse
