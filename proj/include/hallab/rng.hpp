#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace hallab {

using Rng = std::mt19937_64;

// SplitMix64 finalizer. Used to expand one user seed into independent
// per-cell / per-person streams.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// derive_seed(s, {a, b, c}) == mix64(mix64(mix64(s ^ C) ^ a) ^ b) ... so that
// a stream is fully determined by the root seed and its path of tags.
inline std::uint64_t derive_seed(std::uint64_t root,
                                 std::initializer_list<std::uint64_t> path) noexcept {
  std::uint64_t s = mix64(root ^ 0x6a09e667f3bcc909ULL);
  for (auto tag : path) s = mix64(s ^ tag);
  return s;
}

inline Rng make_rng(std::uint64_t root, std::initializer_list<std::uint64_t> path = {}) {
  return Rng(derive_seed(root, path));
}

// Uniform in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) noexcept {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform integer in [0, n).
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(rng);
}

}  // namespace hallab
