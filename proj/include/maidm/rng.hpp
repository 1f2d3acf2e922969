#pragma once

#include <cstdint>
#include <random>

namespace maidm {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed of child stream `stream` under `master`.
///
/// Splitting rule: child = splitmix64(splitmix64(master) ^ splitmix64(stream + 1)).
/// Streams are used for chains, replicates, vehicles and regeneration attempts;
/// nesting the rule (derive_seed(derive_seed(m, a), b)) gives hierarchical streams.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) noexcept {
  return splitmix64(splitmix64(master) ^ splitmix64(stream + 1));
}

inline Rng make_rng(std::uint64_t master, std::uint64_t stream) {
  return Rng(derive_seed(master, stream));
}

}  // namespace maidm
