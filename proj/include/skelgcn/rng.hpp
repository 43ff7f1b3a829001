#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace skelgcn {

// Seed derivation for independent, reproducible RNG streams. Every random
// draw in the project comes from an mt19937_64 seeded through these helpers;
// nothing reads std::random_device.

constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return h;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// A distinct stream per (base seed, purpose tag), so adding or removing one
// consumer never shifts the draws seen by another.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) {
  return splitmix64(base ^ fnv1a(tag));
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::string_view tag,
                                    std::uint64_t index) {
  return splitmix64(derive_seed(base, tag) ^ splitmix64(index));
}

inline std::mt19937_64 make_rng(std::uint64_t seed) { return std::mt19937_64(seed); }

}  // namespace skelgcn
