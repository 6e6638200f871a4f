#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>
#include <string_view>

namespace robust_bandit {

// SplitMix64 finalizer. Used both as a seed mixer and as a tiny
// UniformRandomBitGenerator for per-request streams.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Derives an independent child seed from a root seed and a path of tags.
// derive_seed(s, {run, purpose, user}) is stable across platforms.
constexpr std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> path) noexcept {
    std::uint64_t h = mix64(root);
    for (auto tag : path) h = mix64(h ^ mix64(tag + 0x632be59bd9b4e019ULL));
    return h;
}

// FNV-1a; used where a string must feed a seed path.
constexpr std::uint64_t stable_hash(std::string_view s) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Purpose tags for derive_seed, so that streams never collide by accident.
namespace stream {
inline constexpr std::uint64_t dynamics = 1;
inline constexpr std::uint64_t train_users = 2;
inline constexpr std::uint64_t eval_users = 3;
inline constexpr std::uint64_t policy = 4;
inline constexpr std::uint64_t downsample = 5;
inline constexpr std::uint64_t augment = 6;
inline constexpr std::uint64_t trainer = 7;
inline constexpr std::uint64_t evaluation = 8;
inline constexpr std::uint64_t catalog = 9;
}  // namespace stream

class SplitMix64 {
public:
    using result_type = std::uint64_t;

    explicit constexpr SplitMix64(std::uint64_t seed = 0) noexcept : state_(seed) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

    constexpr result_type operator()() noexcept {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform double in [0, 1) with 53 random bits.
    constexpr double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

private:
    std::uint64_t state_;
};

}  // namespace robust_bandit
