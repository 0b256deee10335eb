#pragma once

// Portable, seedable random streams. The standard <random> distributions are
// implementation-defined, so every draw used by the library goes through the
// helpers below to keep runs bit-identical across toolchains.

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace lmae {

constexpr std::uint64_t splitmix64(std::uint64_t& state) noexcept {
    state += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view text) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (char c : text) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
    }
    return h;
}

/// xoshiro256** generator with a handful of distribution helpers.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) noexcept { reseed(seed); }

    void reseed(std::uint64_t seed) noexcept {
        std::uint64_t sm = seed;
        for (auto& s : state_) {
            s = splitmix64(sm);
        }
    }

    /// Derives an independent child stream, e.g. `root.substream("mask")`.
    [[nodiscard]] Rng substream(std::string_view name) const noexcept {
        std::uint64_t mix = state_[0] ^ rotl(state_[1], 17) ^ fnv1a64(name);
        return Rng{splitmix64(mix)};
    }

    [[nodiscard]] Rng substream(std::string_view name, std::uint64_t id) const noexcept {
        std::uint64_t mix = state_[0] ^ rotl(state_[1], 17) ^ fnv1a64(name) ^ (id * 0xD1B54A32D192ED03ULL);
        return Rng{splitmix64(mix)};
    }

    std::uint64_t next_u64() noexcept {
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

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). n must be positive.
    std::uint64_t below(std::uint64_t n) noexcept {
        // Lemire-style rejection without 128-bit multiply: plain modulo rejection.
        const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
        std::uint64_t x = next_u64();
        while (x >= limit) {
            x = next_u64();
        }
        return x % n;
    }

    /// Uniform integer in [lo, hi].
    int integer(int lo, int hi) noexcept {
        return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi - lo + 1)));
    }

    double normal() noexcept;
    double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

    /// Normal(0, stddev) truncated to [-2 stddev, 2 stddev] by resampling.
    double truncated_normal(double stddev) noexcept;

    using State = std::array<std::uint64_t, 4>;
    [[nodiscard]] const State& state() const noexcept { return state_; }
    void set_state(const State& s) noexcept { state_ = s; }

    [[nodiscard]] std::string serialize() const;
    static Rng deserialize(std::string_view text);

private:
    static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept { return (x << k) | (x >> (64 - k)); }

    State state_{};
};

}  // namespace lmae
