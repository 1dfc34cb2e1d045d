// Deterministic seed derivation for reproducible Monte Carlo streams.
#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace drl {

using Engine = std::mt19937_64;

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Child seed keyed by an ordered list of indices. Streams for distinct keys
/// are independent of each other, so adding a key never perturbs another.
inline constexpr std::uint64_t derive_seed(
    std::uint64_t master, std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = splitmix64(master);
  for (auto k : keys) h = splitmix64(h ^ splitmix64(k + 0x632BE59BD9B4E019ull));
  return h;
}

/// Stream roles, so a dataset draw and a fit with equal indices differ.
enum class StreamRole : std::uint64_t {
  kDistribution = 1,
  kDataset = 2,
  kFit = 3,
  kVerify = 4,
};

inline Engine make_engine(std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32)};
  return Engine(seq);
}

}  // namespace drl
