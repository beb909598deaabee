#pragma once

#include <cstdint>

namespace loom {

/// SplitMix-style 64-bit generator. Pinned here (rather than <random>)
/// so benchmark inputs are reproducible bit-for-bit across platforms
/// and across reimplementations; see README for the exact recurrence.
struct splitmix64 {
    std::uint64_t state;

    explicit splitmix64(std::uint64_t seed = 0) : state(seed) {}

    std::uint64_t next() {
        std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1) using the top 53 bits.
    double next_double() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    /// Uniform in [0, bound). Modulo bias is irrelevant at the bounds
    /// used here (bound << 2^64).
    std::uint64_t next_below(std::uint64_t bound) { return next() % bound; }

    /// Non-negative 31-bit integer.
    std::int32_t next_i31() { return static_cast<std::int32_t>(next() >> 33); }
};

/// Derives an independent stream for substream `i` of `seed`, so inputs
/// can be generated piecewise (e.g. only the locally owned slice).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t i) {
    splitmix64 g(seed ^ (0x9E3779B97F4A7C15ull * (i + 1)));
    return g.next();
}

} // namespace loom
