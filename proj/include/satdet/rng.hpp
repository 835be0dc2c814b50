#pragma once

#include <cstdint>
#include <random>

namespace satdet {

/// Generator used everywhere a seeded stream is needed. std::mt19937_64 is
/// fully specified by the standard, so streams are portable; distributions
/// are only reproducible within one standard library.
using Rng = std::mt19937_64;

/// SplitMix64 finalizer.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Seed of sub-stream (a, b) under master; distinct (a, b) pairs give
/// statistically independent seeds.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b) {
    std::uint64_t h = splitmix64(master);
    h = splitmix64(h ^ (a * 0xd6e8feb86659fd93ULL));
    h = splitmix64(h ^ (b * 0xa0761d6478bd642fULL + 0x1ULL));
    return h;
}

} // namespace satdet
