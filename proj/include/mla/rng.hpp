#pragma once

#include <cmath>
#include <cstdint>

namespace mla {

// splitmix64 (Steele, Lea, Flood 2014). One 64-bit word of state, documented
// constants, identical value stream on every platform. Good enough statistics
// for parameter init and data synthesis, and trivially seedable/forkable.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [0,1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Integer in [0, n). n must be positive. Rejection-free modulo is fine at
    // the ranges used here (n far below 2^63), bias < 2^-50.
    uint64_t below(uint64_t n) { return next_u64() % n; }

    // Standard normal via Box-Muller; consumes exactly two uniforms per call.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // Derive an independent stream; mixes the tag through one splitmix round.
    Rng fork(uint64_t tag) {
        Rng mix(state_ ^ (0xD1B54A32D192ED03ull * (tag + 1)));
        return Rng(mix.next_u64());
    }

private:
    uint64_t state_;
};

}  // namespace mla
