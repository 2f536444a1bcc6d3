#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fedlws {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Independent stream keyed by a base seed plus a tuple of stream identifiers,
/// e.g. make_rng(seed, {kClientStream, client_id, round}).
inline Rng make_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream = {}) {
    std::uint64_t h = splitmix64(seed);
    for (auto s : stream) h = splitmix64(h ^ splitmix64(s + 0x632be59bd9b4e019ULL));
    return Rng(h);
}

namespace stream {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kData = 2;
inline constexpr std::uint64_t kPartition = 3;
inline constexpr std::uint64_t kParticipants = 4;
inline constexpr std::uint64_t kClientShuffle = 5;
inline constexpr std::uint64_t kTestSplit = 6;
}  // namespace stream

}  // namespace fedlws
