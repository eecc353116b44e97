#pragma once

#include <cstdint>
#include <random>

namespace prenet {

// splitmix64 finalizer; used to derive independent stream seeds from a master
// seed and a counter so that results do not depend on execution order.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t counter) {
  return mix_seed(mix_seed(master) ^ (counter + 0x632be59bd9b4e019ULL));
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b) {
  return derive_seed(derive_seed(master, a), b);
}

using Rng = std::mt19937_64;

}  // namespace prenet
