#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace rbs {

using Rng = std::mt19937_64;

// All randomness in a run derives from one base seed. A named sub-stream is
// seeded with splitmix64(base ^ fnv1a(name) ^ mix(i) ^ mix(j)), so stream
// contents never depend on the order in which other streams are consumed.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

constexpr std::uint64_t derive_seed(std::uint64_t base, std::string_view stream,
                                    std::uint64_t i = 0, std::uint64_t j = 0) {
  std::uint64_t h = splitmix64(base ^ fnv1a(stream));
  h = splitmix64(h ^ splitmix64(i + 0x1234567ULL));
  h = splitmix64(h ^ splitmix64(j + 0x89ABCDEFULL));
  return h;
}

inline Rng make_rng(std::uint64_t base, std::string_view stream, std::uint64_t i = 0,
                    std::uint64_t j = 0) {
  return Rng(derive_seed(base, stream, i, j));
}

// Uniform double in [0, 1) from the top 53 bits; platform independent.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// Uniform integer in [0, n) by rejection; platform independent.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return r % n;
}

}  // namespace rbs
