#pragma once

#include <cstdint>
#include <vector>

namespace fedadapt {

// All randomness in the library flows through this header so that results are
// reproducible bit-for-bit across runs and independent of the standard
// library's distribution implementations.

// splitmix64: used to derive independent stream seeds from (seed, tags).
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derive a child seed from a parent seed and up to three stream tags.
// derive(s, a) != derive(s, b) for a != b with overwhelming probability.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag0,
                                 std::uint64_t tag1 = 0, std::uint64_t tag2 = 0) {
    std::uint64_t h = splitmix64(seed ^ 0x243f6a8885a308d3ULL);
    h = splitmix64(h ^ tag0);
    h = splitmix64(h ^ (tag1 * 0x9e3779b97f4a7c15ULL));
    h = splitmix64(h ^ (tag2 * 0xc2b2ae3d27d4eb4fULL));
    return h;
}

// Stream tags for derive_seed. Each pipeline component mixes its own tag so
// that identical user seeds never alias between components.
enum SeedTag : std::uint64_t {
    kTagInit = 1,         // parameter initialization
    kTagShuffle = 2,      // per-epoch batch shuffles
    kTagLocalTrain = 3,   // per-(round, client) local training
    kTagClientSample = 4, // per-round client subsampling
    kTagPartition = 5,    // federation construction
    kTagChannelSelect = 6,
    kTagAnchor = 7,
    kTagAttackInit = 8,
    kTagSynthData = 9,
    kTagRandomGroup = 10,
};

// Small xoshiro-style generator; only raw 64-bit draws are exposed publicly,
// everything else is built on top of them.
class Rng {
public:
    explicit Rng(std::uint64_t seed) {
        // Seed the state with splitmix64 per the xoshiro authors' advice.
        std::uint64_t s = seed;
        for (auto& word : state_) {
            s = splitmix64(s);
            word = s;
        }
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform in [0, 1) with 24 bits of mantissa (exact in float).
    float next_float() {
        return static_cast<float>(next_u64() >> 40) * (1.0f / 16777216.0f);
    }

    // Uniform in [lo, hi).
    float uniform(float lo, float hi) { return lo + (hi - lo) * next_float(); }

    // Approximate standard normal via sum of uniforms (Irwin-Hall, k=12);
    // adequate for data noise, exactly reproducible, and branch-free.
    float next_gaussian() {
        float acc = 0.0f;
        for (int i = 0; i < 12; ++i) acc += next_float();
        return acc - 6.0f;
    }

    // Unbiased-enough bounded draw for shuffles (modulo bias is < 2^-40 for
    // the bounds used here).
    std::uint64_t next_below(std::uint64_t bound) { return next_u64() % bound; }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }
    std::uint64_t state_[4];
};

// Fisher-Yates shuffle of 0..n-1, deterministic for a given seed.
inline std::vector<int> shuffled_indices(int n, Rng& rng) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    for (int i = n - 1; i > 0; --i) {
        const int j = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(i) + 1));
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
    return idx;
}

inline std::vector<int> shuffled_indices(int n, std::uint64_t seed) {
    Rng rng(seed);
    return shuffled_indices(n, rng);
}

}  // namespace fedadapt
