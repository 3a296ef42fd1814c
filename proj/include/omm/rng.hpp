#pragma once

#include <cstdint>
#include <vector>

namespace omm {

// splitmix64 round; used both as a generator for sub-seeding and to spread
// user-provided seeds before they reach the solver streams.
inline std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

// Seed for the trial-th member of an ensemble. Streams are decorrelated by
// the splitmix64 increment; identical (seed, trial) is identical stream.
inline std::uint64_t subseed(std::uint64_t seed, std::uint64_t trial) {
    return splitmix64(seed + trial * 0x9E3779B97F4A7C15ull);
}

// Small xoshiro-free deterministic generator: repeated splitmix64 on a
// counter. Quality is ample for initial conditions and permutations, and the
// stream is identical on every platform (no distribution-object variance).
class rng_stream {
public:
    explicit rng_stream(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() { return splitmix64(state_++); }

    // uniform in [0, 1): 53 mantissa bits
    double next_unit() { return (next_u64() >> 11) * 0x1.0p-53; }

    // uniform index in [0, n)
    std::uint64_t next_index(std::uint64_t n) { return next_u64() % n; }

    // Fisher-Yates permutation of 0..n-1
    std::vector<int> permutation(int n) {
        std::vector<int> p(n);
        for (int i = 0; i < n; ++i) p[i] = i;
        for (int i = n - 1; i > 0; --i) {
            int j = static_cast<int>(next_index(static_cast<std::uint64_t>(i) + 1));
            std::swap(p[i], p[j]);
        }
        return p;
    }

private:
    std::uint64_t state_;
};

}  // namespace omm
