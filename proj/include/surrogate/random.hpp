#pragma once

#include <cstdint>
#include <random>

namespace surrogate {

using Engine = std::mt19937_64;

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed of an independent stream identified by (seed, stream). Counter based:
/// the result depends only on the pair, never on how many streams were drawn
/// before, so parallel layouts cannot change what any stream sees.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
  return mix64(mix64(seed) ^ mix64(stream + 0x632be59bd9b4e019ULL));
}

inline Engine make_engine(std::uint64_t seed, std::uint64_t stream) {
  return Engine(derive_seed(seed, stream));
}

// Stream tags, kept distinct so different consumers of one seed never alias.
namespace stream {
inline constexpr std::uint64_t kTrees = 0x1000;
inline constexpr std::uint64_t kFolds = 0x2000;
inline constexpr std::uint64_t kCentering = 0x3000;
inline constexpr std::uint64_t kExperimental = 0x4000;
inline constexpr std::uint64_t kObservational = 0x5000;
inline constexpr std::uint64_t kOracle = 0x6000;
inline constexpr std::uint64_t kReplication = 0x7000;
inline constexpr std::uint64_t kSubsample = 0x8000;
inline constexpr std::uint64_t kNuisance = 0x9000;
}  // namespace stream

}  // namespace surrogate
