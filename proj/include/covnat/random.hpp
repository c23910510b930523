#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace covnat {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Deterministic RNG. All sampling helpers are implemented on top of raw
// mt19937_64 draws so that results do not depend on the standard library's
// distribution internals.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // Uniform in [0, 1) with 53 bits of resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). n must be > 0.
    std::uint64_t bounded(std::uint64_t n) {
        return static_cast<std::uint64_t>(
            (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
    }

    // Uniform integer in [lo, hi] inclusive.
    std::int64_t range(std::int64_t lo, std::int64_t hi) {
        return lo + static_cast<std::int64_t>(bounded(static_cast<std::uint64_t>(hi - lo + 1)));
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Independent substream keyed by (seed material, tag).
    Rng fork(std::uint64_t tag) const {
        return Rng(splitmix64(state_hash() ^ splitmix64(tag)));
    }

private:
    std::uint64_t state_hash() const {
        // Hash a copy's next output instead of internal state; cheap and stable.
        std::mt19937_64 copy = eng_;
        return copy();
    }

    std::mt19937_64 eng_;
};

// Stable stream id from a string tag, for deriving per-purpose RNGs.
inline std::uint64_t stream_tag(const std::string& name) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : name) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace covnat
