#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace fluoroforge {

/// splitmix64 finalizer. Bijective on 64-bit words, used to derive
/// decorrelated stream seeds from (seed, tag) pairs.
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
    return mix64(mix64(a) ^ b);
}

inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    return mix64(mix64(a, b) ^ c);
}

inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b, std::uint64_t c,
                           std::uint64_t d) {
    return mix64(mix64(a, b, c) ^ d);
}

/// Deterministic random source. The engine is std::mt19937_64, whose output
/// sequence is fixed by the standard, and every distribution is implemented
/// here rather than via std::*_distribution so that draws are bit-identical
/// across standard libraries. Keeps its construction seed so substreams can
/// be derived as pure functions of (seed, tag).
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

    std::uint64_t seed() const { return seed_; }

    /// Independent child stream. Depends only on this stream's construction
    /// seed and the tag, never on how many draws were consumed.
    Rng substream(std::uint64_t tag) const { return Rng(mix64(seed_, tag)); }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform01() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform01();
    }

    /// Standard normal via Box-Muller (cosine branch, no cached spare).
    double normal(double mean = 0.0, double stddev = 1.0) {
        double u1 = uniform01();
        double u2 = uniform01();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double two_pi = 6.283185307179586476925286766559;
        return mean + stddev * (r * std::cos(two_pi * u2));
    }

    /// exp(N(log_mu, log_sigma)).
    double log_normal(double log_mu, double log_sigma) {
        return std::exp(normal(log_mu, log_sigma));
    }

    /// Poisson count by Knuth's product-of-uniforms method. Large means are
    /// split into chunks (counts are additive across independent Poissons)
    /// to keep the running product away from underflow.
    long poisson(double mean) {
        if (!(mean >= 0.0)) throw std::invalid_argument("poisson mean must be >= 0");
        long total = 0;
        double remaining = mean;
        const double chunk = 32.0;
        while (remaining > 0.0) {
            const double lambda = remaining > chunk ? chunk : remaining;
            remaining -= lambda;
            const double limit = std::exp(-lambda);
            double prod = uniform01();
            while (prod > limit) {
                ++total;
                prod *= uniform01();
            }
        }
        return total;
    }

    /// Index draw proportional to non-negative weights (not necessarily
    /// normalized). Scans the cumulative sum once.
    std::size_t categorical(std::span<const double> weights) {
        double sum = 0.0;
        for (double w : weights) {
            if (!(w >= 0.0)) throw std::invalid_argument("categorical weight must be >= 0");
            sum += w;
        }
        if (!(sum > 0.0)) throw std::invalid_argument("categorical weights must not all be zero");
        const double target = uniform01() * sum;
        double cum = 0.0;
        std::size_t last_positive = 0;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            if (weights[i] > 0.0) last_positive = i;
            cum += weights[i];
            if (target < cum) return i;
        }
        return last_positive;
    }

    /// Uniform integer in [0, n). Fixed-point multiply; the bias for any
    /// realistic n is below 2^-40 and the draw count is always exactly one.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("below(0) is undefined");
        const unsigned __int128 wide =
            static_cast<unsigned __int128>(engine_()) * static_cast<unsigned __int128>(n);
        return static_cast<std::uint64_t>(wide >> 64);
    }

    /// Fisher-Yates shuffle. std::shuffle is implementation-defined, this
    /// is not.
    template <class T>
    void shuffle(std::vector<T>& values) {
        for (std::size_t i = values.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(values[i - 1], values[j]);
        }
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

/// Identity permutation of size n shuffled by rng.
inline std::vector<std::size_t> random_permutation(std::size_t n, Rng& rng) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    return order;
}

}  // namespace fluoroforge
