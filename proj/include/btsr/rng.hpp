#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace btsr {

using Rng = std::mt19937_64;

// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t hash_keys(std::initializer_list<std::uint64_t> keys) noexcept {
    std::uint64_t h = 0x243f6a8885a308d3ULL;
    for (auto k : keys) h = mix64(h ^ mix64(k));
    return h;
}

// Uniform double in [0, 1) that depends only on the keys.
inline double counter_uniform(std::initializer_list<std::uint64_t> keys) noexcept {
    return static_cast<double>(hash_keys(keys) >> 11) * 0x1.0p-53;
}

// Independent generator stream for a (seed, stream, ...) tuple.
inline Rng make_rng(std::initializer_list<std::uint64_t> keys) {
    return Rng(hash_keys(keys));
}

// Stream identifiers for make_rng so that independent consumers never share state.
enum class Stream : std::uint64_t {
    Init = 1,
    Shuffle = 2,
    Negatives = 3,
    Pairing = 4,
    Dropout = 5,
    Synthetic = 6,
    Gradcheck = 7,
};

inline std::uint64_t key(Stream s) noexcept { return static_cast<std::uint64_t>(s); }

}  // namespace btsr
