#pragma once

#include <cstdint>
#include <random>

namespace can {

using Rng = std::mt19937_64;

// Derives an independent stream seed from a base seed and a stream tag
// (splitmix64 finalizer over the pair).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Stream tags. Keep these stable: changing one changes every generated file.
namespace stream {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kShuffle = 2;
inline constexpr std::uint64_t kTrainSplit = 10;
inline constexpr std::uint64_t kValSplit = 11;
inline constexpr std::uint64_t kTestSplit = 12;
inline constexpr std::uint64_t kResponse = 20;
inline constexpr std::uint64_t kEnsoShuffle = 30;
inline constexpr std::uint64_t kCorrupt = 40;
}  // namespace stream

}  // namespace can
