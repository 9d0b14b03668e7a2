#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace ipp {

// std::uniform_int_distribution and friends are implementation-defined, so
// seeded runs would not reproduce across standard libraries. Everything
// random in the toolkit goes through these helpers instead.

// Unbiased draw from [0, n) via rejection sampling.
inline std::uint64_t bounded_uniform(std::mt19937_64& rng, std::uint64_t n) {
    if (n == 0) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return x % n;
}

// Uniform double in [0, 1) with 53 bits of precision.
inline double uniform_real(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform double in [lo, hi).
inline double uniform_real(std::mt19937_64& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform_real(rng);
}

// Fisher-Yates with the explicit bounded draw above.
template <typename T>
void deterministic_shuffle(std::vector<T>& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(bounded_uniform(rng, i));
        std::swap(v[i - 1], v[j]);
    }
}

}  // namespace ipp
