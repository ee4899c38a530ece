#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "s3f/vec.hpp"

namespace s3f {

// Seeded generator with pinned uniform/normal algorithms so that streams are
// reproducible independently of the standard library in use.
class Rng {
  public:
    explicit Rng(uint64_t seed) : seed_(seed), gen_(seed) {}

    uint64_t bits() { return gen_(); }

    // Uniform in [0, 1).
    double uniform() { return std::ldexp(static_cast<double>(gen_() >> 11), -53); }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    uint64_t index(uint64_t n) { return n ? gen_() % n : 0; }

    // Standard normal via Box-Muller.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform(), u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * M_PI * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    Vec3 normal_vec3(double stddev) {
        return {normal(0, stddev), normal(0, stddev), normal(0, stddev)};
    }

    // Derive an independent stream keyed on (seed, salt); does not consume
    // state, so fork order cannot perturb the parent stream.
    Rng fork(uint64_t salt) const {
        uint64_t z = seed_ + 0x9e3779b97f4a7c15ull * (salt + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return Rng(z ^ (z >> 31));
    }

  private:
    uint64_t seed_;
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0;
};

}  // namespace s3f
