#pragma once

#include <cstdint>
#include <cstddef>
#include <vector>

namespace guide {

// Deterministic PRNG utilities. Everything that consumes randomness in this
// codebase goes through Rng so that results are bit-identical across runs,
// platforms and thread counts. std::uniform_* distributions are avoided on
// purpose: their output is implementation-defined.
inline uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// xoshiro256** seeded via splitmix64.
class Rng {
public:
    explicit Rng(uint64_t seed) {
        uint64_t sm = seed;
        for (auto& word : state_) word = splitmix64(sm);
    }

    uint64_t next_u64() {
        const uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0,1) with 53-bit resolution.
    double u01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n), n > 0.
    uint64_t below(uint64_t n) {
        // Rejection sampling keeps the draw exactly uniform.
        const uint64_t threshold = -n % n;
        for (;;) {
            uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    // Standard normal via Box-Muller (pairs cached).
    double normal();

    // Fisher-Yates shuffle of indices [0, n).
    std::vector<size_t> permutation(size_t n);

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    uint64_t state_[4];
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Derives an independent stream for a keyed sub-task (per input, per epoch,
// ...) so parallel and serial execution order cannot change the draws.
inline Rng derive_stream(uint64_t seed, uint64_t key_a, uint64_t key_b = 0) {
    uint64_t s = seed;
    uint64_t mixed = splitmix64(s) ^ (key_a * 0x9e3779b97f4a7c15ULL);
    s = mixed;
    mixed = splitmix64(s) ^ (key_b * 0xc2b2ae3d27d4eb4fULL);
    s = mixed;
    return Rng(splitmix64(s));
}

}  // namespace guide
