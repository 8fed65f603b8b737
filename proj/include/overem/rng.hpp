#pragma once

// Seed derivation. Every random stream is identified by (root seed, purpose
// string, index), so adding a new consumer never shifts an existing stream.

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace overem::rng {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline constexpr std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose,
                                           std::uint64_t index = 0) {
  return splitmix64(splitmix64(root ^ fnv1a64(purpose)) + index);
}

/// Fills `out` with i.i.d. N(0,1) draws from a fresh generator seeded with `seed`.
inline void fill_standard_normal(std::span<double> out, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : out) v = normal(gen);
}

}  // namespace overem::rng
