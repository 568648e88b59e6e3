#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace rankmatch {

// Standard engines are bit-reproducible across platforms; standard
// distributions are not, so bounded draws and shuffles live here.
using Rng = std::mt19937_64;

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Independent sub-seed for a purpose tag and integer coordinates, so one
/// user seed can feed many streams without them overlapping.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag,
                                    std::uint64_t a = 0, std::uint64_t b = 0) noexcept
{
    std::uint64_t h = mix64(seed);
    for (char c : tag) h = mix64(h ^ static_cast<unsigned char>(c));
    h = mix64(h ^ a);
    return mix64(h ^ b);
}

/// Uniform integer in [0, bound) by rejection; bound > 0.
inline std::uint64_t uniform_below(Rng& rng, std::uint64_t bound) noexcept
{
    // 2^64 mod bound; values below it would bias the low residues
    const std::uint64_t threshold = (0 - bound) % bound;
    std::uint64_t x;
    do {
        x = rng();
    } while (x < threshold);
    return x % bound;
}

/// Fisher-Yates.
template <typename T>
void shuffle(std::span<T> values, Rng& rng) noexcept
{
    for (std::size_t i = values.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(uniform_below(rng, i));
        std::swap(values[i - 1], values[j]);
    }
}

} // namespace rankmatch
