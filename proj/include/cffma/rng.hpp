#pragma once

#include <cmath>
#include <cstdint>

namespace cffma {

// SplitMix64 generator. Small state, bit-stable across platforms, and cheap
// to re-seed, which lets data loading be a pure function of (seed, step).
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1).
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    float next_float() { return static_cast<float>(next_double()); }

    float uniform(float lo, float hi) { return lo + (hi - lo) * next_float(); }

    double uniform_double(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    uint64_t below(uint64_t bound) { return bound == 0 ? 0 : next_u64() % bound; }

    // Standard normal via Box-Muller.
    float normal() {
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 1e-12) u1 = next_double();
        return static_cast<float>(std::sqrt(-2.0 * std::log(u1)) *
                                  std::cos(2.0 * 3.14159265358979323846 * u2));
    }

private:
    uint64_t state_;
};

// Mixes (seed, a, b) into an independent stream seed.
inline uint64_t derive_seed(uint64_t seed, uint64_t a, uint64_t b = 0) {
    Rng r(seed ^ (a * 0x9e3779b97f4a7c15ULL + 0x165667b19e3779f9ULL) ^
          (b * 0xc2b2ae3d27d4eb4fULL + 0x27d4eb2f165667c5ULL));
    return r.next_u64();
}

}  // namespace cffma
