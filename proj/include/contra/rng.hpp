#pragma once

#include <cstdint>
#include <span>
#include <string_view>

#include "contra/error.hpp"

namespace contra {

// SplitMix64 (Steele, Lea & Flood). Chosen over std::mt19937_64 because the
// whole generator is ~10 lines and its output sequence is part of this
// engine's external reproducibility contract: a given (seed, stream key)
// yields the same token choices on every platform and in every build.
class SplitMix64 {
public:
    explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ull;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform double in [0, 1), 53 significant bits.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

private:
    std::uint64_t state_;
};

inline std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x00000100000001B3ull;
    }
    return h;
}

// Stream-splitting rule: the RNG for a named stream (one decode invocation,
// one prompt) starts at SplitMix64(seed XOR fnv1a64(key)).next_u64(). Workers
// may therefore run in any order without changing any sampled token.
inline std::uint64_t stream_seed(std::uint64_t global_seed, std::string_view key) {
    SplitMix64 mix(global_seed ^ fnv1a64(key));
    return mix.next_u64();
}

// Inverse-CDF draw over probabilities listed in caller-defined order: returns
// the first index i with u < p_0 + ... + p_i. The order of `probs` is part of
// the reproducibility contract, so callers pass candidates in a documented
// (sorted) order.
inline std::size_t sample_categorical(std::span<const double> probs, SplitMix64& rng) {
    if (probs.empty()) throw InvalidParameter("sample_categorical: empty distribution");
    const double u = rng.next_double();
    double cum = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        cum += probs[i];
        if (u < cum) return i;
    }
    return probs.size() - 1;  // guard against rounding shortfall in cum
}

}  // namespace contra
