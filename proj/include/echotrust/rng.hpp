#pragma once
// Counter-based deterministic randomness. The stochastic backend and the
// synthetic-dataset generator must produce identical streams across platforms
// and runs, so no std:: distributions are used anywhere.

#include <cstdint>
#include <string_view>

namespace echotrust::detail {

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

class DeterministicRng {
public:
    explicit DeterministicRng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() { return splitmix64(state_); }

    // Uniform in [0,1), 53 bits of precision.
    double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n). Modulo bias is irrelevant at the n <= 8 sizes
    // used here.
    std::uint64_t next_below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

private:
    std::uint64_t state_;
};

// Mixes the invocation coordinates into one rng seed.
inline DeterministicRng rng_for(std::uint64_t seed, std::string_view sample_id, int role_index,
                                int attempt) {
    std::uint64_t state = seed;
    state = splitmix64(state) ^ fnv1a64(sample_id);
    state = splitmix64(state) ^ static_cast<std::uint64_t>(role_index + 1);
    state = splitmix64(state) ^ static_cast<std::uint64_t>(attempt + 1);
    splitmix64(state);
    return DeterministicRng(state);
}

}  // namespace echotrust::detail
