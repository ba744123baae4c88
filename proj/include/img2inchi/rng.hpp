#pragma once

#include <cmath>
#include <cstdint>

namespace img2inchi {

// SplitMix64. All randomness in the project flows through this generator so
// that every artifact is a pure function of its seed, independent of the
// standard library's distribution implementations.
class Rng {
   public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 bits of entropy.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n). n must be positive.
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

    // Standard normal via Box-Muller (one value per call; the cosine twin is
    // discarded to keep the stream layout simple).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // Normal(0, std) resampled until |z| <= 2*std.
    double truncated_normal(double std_dev) {
        for (;;) {
            const double z = normal();
            if (z >= -2.0 && z <= 2.0) return z * std_dev;
        }
    }

    // Derived per-sample stream, as used by the data generator.
    static Rng for_sample(std::uint64_t seed, std::uint64_t sample_index) {
        return Rng(seed ^ sample_index);
    }

   private:
    std::uint64_t state_;
};

}  // namespace img2inchi
