#pragma once

#include <cmath>
#include <cstdint>

#include "trajden/util.hpp"

namespace trajden {

// SplitMix64 generator. std::mt19937 streams are portable but the standard
// distributions are not; everything seeded must reproduce bit-identically,
// so both the stream and the transforms live here.
class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Rejection sampling keeps it unbiased.
    uint64_t uniform_int(uint64_t n) {
        if (n == 0) throw numeric_error("uniform_int: empty range");
        uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return v % n;
    }

    // Box-Muller, cosine branch only. Two uniforms per draw, no carried state.
    double normal() {
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
    }

    double normal(double mu, double sigma) { return mu + sigma * normal(); }

    bool bernoulli(double p) { return uniform() < p; }

    // Derives an independent stream; hashing keeps forks order-free.
    Rng fork(uint64_t tag) const {
        uint64_t z = state_ ^ (0x9E3779B97F4A7C15ULL * (tag + 0x632BE59BD9B4E019ULL));
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return Rng(z ^ (z >> 31));
    }

  private:
    uint64_t state_;
};

// Stateless mixing of multiple seeds into one stream seed.
inline uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c = 0) {
    Rng r(a);
    return r.fork(b).fork(c).next_u64();
}

}  // namespace trajden
