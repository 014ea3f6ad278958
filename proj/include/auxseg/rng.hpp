#pragma once

#include <cstdint>

namespace auxseg {

/// SplitMix64. Integer-only, so sequences are identical on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) noexcept : state_(seed) {}

    std::uint64_t next_u64() noexcept {
        state_ += 0x9E3779B97F4A7C15ULL;
        return mix(state_);
    }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [lo, hi]. Modulo bias is negligible for the small ranges used here.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) noexcept {
        const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>(next_u64() % span);
    }

    std::uint64_t state() const noexcept { return state_; }

    /// The SplitMix64 output function applied to a single value.
    static std::uint64_t mix(std::uint64_t z) noexcept {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    /// One full SplitMix64 step from `seed` (increment, then mix).
    static std::uint64_t hash(std::uint64_t seed) noexcept { return mix(seed + 0x9E3779B97F4A7C15ULL); }

private:
    std::uint64_t state_;
};

}  // namespace auxseg
