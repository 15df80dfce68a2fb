#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

#include <boost/random/normal_distribution.hpp>

namespace catbond {

using Rng = std::mt19937_64;

/// Independent generator for (seed, stream); streams are used for chains and stages.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                      0x9e3779b9u};
    return Rng(seq);
}

/// FNV-1a; used to derive stage seeds and config hashes that are stable across platforms.
inline std::uint64_t fnv1a(std::string_view text, std::uint64_t h = 0xcbf29ce484222325ull) {
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t stage_seed(std::uint64_t seed, std::string_view stage) {
    return fnv1a(stage, seed ^ 0xcbf29ce484222325ull);
}

namespace rnd {

inline double uniform(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

/// Ziggurat sampler; markedly cheaper than the std polar method in the latent-path sweeps.
inline double normal(Rng& rng) { return boost::random::normal_distribution<double>(0.0, 1.0)(rng); }

/// Gamma with shape/rate parameterisation.
inline double gamma(Rng& rng, double shape, double rate) {
    return std::gamma_distribution<double>(shape, 1.0 / rate)(rng);
}

inline double beta(Rng& rng, double a, double b) {
    const double x = std::gamma_distribution<double>(a, 1.0)(rng);
    const double y = std::gamma_distribution<double>(b, 1.0)(rng);
    return x / (x + y);
}

/// Inverse gamma with shape/scale: density proportional to x^{-shape-1} exp(-scale/x).
inline double inverse_gamma(Rng& rng, double shape, double scale) {
    return scale / std::gamma_distribution<double>(shape, 1.0)(rng);
}

inline long poisson(Rng& rng, double mean) {
    if (!(mean > 0.0)) return 0;
    return std::poisson_distribution<long>(mean)(rng);
}

} // namespace rnd
} // namespace catbond
