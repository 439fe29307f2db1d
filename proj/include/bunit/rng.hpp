#pragma once

#include <cmath>
#include <cstdint>

namespace bunit {

// Deterministic splitmix64 generator. The standard <random> distributions are
// implementation-defined, which would break byte-identical artifacts across
// toolchains, so all sampling goes through this class.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Unbiased integer in [0, n) via rejection sampling. n must be >= 1.
    uint64_t uniform(uint64_t n) {
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x = next_u64();
        while (x >= limit) x = next_u64();
        return x % n;
    }

    // Integer in [lo, hi] inclusive.
    int64_t uniform_range(int64_t lo, int64_t hi) {
        return lo + static_cast<int64_t>(uniform(static_cast<uint64_t>(hi - lo + 1)));
    }

    // Real in [0, 1) with 53 bits of precision.
    double uniform_real() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller. Stateless between calls on purpose.
    double normal() {
        double u1 = uniform_real();
        while (u1 <= 0.0) u1 = uniform_real();
        const double u2 = uniform_real();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Independent child stream; mixing the ids through splitmix keeps streams
    // decorrelated for (seed, sequence) style derivations.
    static Rng derive(uint64_t seed, uint64_t a, uint64_t b = 0) {
        Rng r(seed);
        uint64_t s = r.next_u64();
        Rng ra(a ^ 0x517cc1b727220a95ULL);
        s ^= ra.next_u64();
        Rng rb(b ^ 0x2545f4914f6cdd1dULL);
        s ^= rb.next_u64();
        return Rng(s);
    }

private:
    uint64_t state_;
};

} // namespace bunit
