// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string_view>

namespace tt {

// splitmix64, used only to expand seeds into xoshiro state.
// Constants from Steele, Lea & Flood (2014).
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// FNV-1a 64-bit. Also the hash behind the caption pseudo-encoder, so the
// constants are load-bearing: offset basis 14695981039346656037, prime
// 1099511628211.
inline std::uint64_t fnv1a64(std::string_view bytes,
                             std::uint64_t h = 14695981039346656037ULL) {
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

// xoshiro256++ (Blackman & Vigna, 2019). All randomness in the project flows
// through this generator so results are identical across platforms; the
// standard library distributions are avoided on purpose.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& word : s_) word = splitmix64(sm);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0, 1): top 53 bits scaled by 2^-53.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Modulo bias is < 2^-60 for the bounds used
    // here (class counts, pixel coordinates) and is accepted for the sake of
    // a fixed, portable draw count.
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

    // Approximate standard normal as sum of 12 uniforms minus 6 (Irwin-Hall).
    // Chosen over Box-Muller so that dataset generation never touches libm
    // transcendentals and stays bit-identical across platforms.
    double normal_ih() {
        double acc = 0.0;
        for (int i = 0; i < 12; ++i) acc += uniform();
        return acc - 6.0;
    }

    // Normal truncated to [-2, 2] standard deviations, by rejection.
    double truncated_normal(double stddev) {
        double x = normal_ih();
        while (x < -2.0 || x > 2.0) x = normal_ih();
        return x * stddev;
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }
    std::uint64_t s_[4];
};

// Derives an independent stream for a named purpose from one run seed, so
// adding or removing a consumer never shifts the draws of another.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose) {
    std::uint64_t mix = seed ^ fnv1a64(purpose);
    return splitmix64(mix);
}

}  // namespace tt
