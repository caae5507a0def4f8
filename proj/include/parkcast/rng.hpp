#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace parkcast {

/// Deterministic random source. All randomness in the library flows through
/// this type so that a 64-bit seed reproduces the exact same stream on every
/// platform: the engine is std::mt19937_64 (sequence fixed by the standard)
/// and all real-valued draws are derived from raw 64-bit words here instead
/// of going through implementation-defined std distributions.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller; caches the spare deviate.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    /// Uniform index in [0, n). Rejection sampling, no modulo bias.
    std::size_t index(std::size_t n) {
        if (n <= 1) return 0;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x = next_u64();
        while (x >= limit) x = next_u64();
        return static_cast<std::size_t>(x % n);
    }

    /// Poisson draw; Knuth's product method for small means, normal
    /// approximation for large ones.
    long poisson(double mean) {
        if (mean <= 0.0) return 0;
        if (mean > 60.0) {
            const double x = mean + std::sqrt(mean) * normal();
            return x < 0.0 ? 0 : static_cast<long>(x + 0.5);
        }
        const double threshold = std::exp(-mean);
        long k = 0;
        double p = 1.0;
        do {
            ++k;
            p *= uniform();
        } while (p > threshold);
        return k - 1;
    }

    /// Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::swap(items[i - 1], items[index(i)]);
        }
    }

    /// Derives an independent deterministic stream for a sub-task.
    Rng split(std::uint64_t stream) {
        const std::uint64_t mix = next_u64();
        return Rng(mix ^ (stream * 0x9E3779B97F4A7C15ull + 0xD1B54A32D192ED03ull));
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace parkcast
