#pragma once

#include <cstdint>
#include <random>

namespace atlas {

inline std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  return splitmix(seed ^ splitmix(tag));
}

/// Independent generator for one (seed, tag) pair.
inline std::mt19937_64 rng_stream(std::uint64_t seed, std::uint64_t tag) {
  return std::mt19937_64(derive_seed(seed, tag));
}

}  // namespace atlas
