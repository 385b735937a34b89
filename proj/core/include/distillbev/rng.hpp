#pragma once

#include <cstdint>
#include <cmath>

namespace distillbev {

// Splittable counter-based generator. A stream is keyed by
// (seed, sample index, stream id) so samples can be generated in any order,
// or in parallel, and still produce identical bytes everywhere. The mixing
// function is splitmix64, which is cheap and has full 64-bit avalanche.
class Rng {
public:
    Rng(std::uint64_t seed, std::uint64_t sample, std::uint64_t stream) {
        state_ = mix(mix(mix(seed + 0x9e3779b97f4a7c15ULL) ^ sample) ^ stream);
    }

    explicit Rng(std::uint64_t seed) : Rng(seed, 0, 0) {}

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        return mix(state_);
    }

    // Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    std::uint64_t below(std::uint64_t n) { return n ? next_u64() % n : 0; }

    // Box-Muller; std::normal_distribution is not portable across stdlibs.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // Knuth-style Poisson draw; rates here are tiny (a few per scene).
    std::uint64_t poisson(double rate) {
        double l = std::exp(-rate);
        std::uint64_t k = 0;
        double p = 1.0;
        do {
            ++k;
            p *= uniform();
        } while (p > l);
        return k - 1;
    }

private:
    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t state_;
};

}  // namespace distillbev
