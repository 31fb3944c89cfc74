#pragma once

#include <cstdint>
#include <random>

namespace taxon {

using Rng = std::mt19937_64;

// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives an independent stream seed from a base seed, a purpose tag and an index.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag,
                                    std::uint64_t index = 0) {
  return mix64(mix64(base ^ mix64(tag)) + index);
}

// Uniform double in [0, 1) with 53 random bits; identical on every platform.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

namespace seed_tag {
inline constexpr std::uint64_t kSelect = 0x53454c;
inline constexpr std::uint64_t kUpdate = 0x555044;
inline constexpr std::uint64_t kInsert = 0x494e53;
inline constexpr std::uint64_t kTrial = 0x54524c;
inline constexpr std::uint64_t kWorker = 0x574b52;
inline constexpr std::uint64_t kTruth = 0x545254;
inline constexpr std::uint64_t kResample = 0x525350;
inline constexpr std::uint64_t kTest = 0x545354;
}  // namespace seed_tag

}  // namespace taxon
