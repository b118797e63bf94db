#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace ibp {

// splitmix64 finalizer; used to derive independent streams from (seed, tag...)
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
  return mix64(a ^ (mix64(b) + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2)));
}

inline std::mt19937 make_rng(std::uint64_t seed) {
  return std::mt19937(static_cast<std::uint32_t>(mix64(seed) >> 32));
}

inline std::mt19937 make_rng(std::uint64_t seed, std::uint64_t s1) {
  return make_rng(hash_combine(seed, s1));
}

inline std::mt19937 make_rng(std::uint64_t seed, std::uint64_t s1, std::uint64_t s2) {
  return make_rng(hash_combine(hash_combine(seed, s1), s2));
}

// Platform-stable draws. The std:: distributions are implementation-defined,
// so tests and checkpoints rely on these instead.
inline std::uint32_t uniform_u32(std::mt19937& g, std::uint32_t n) {
  // Lemire's multiply-shift; slight modulo bias is irrelevant here but this is exactly reproducible.
  return static_cast<std::uint32_t>((static_cast<std::uint64_t>(g()) * n) >> 32);
}

template <typename T>
T uniform_real(std::mt19937& g, T lo, T hi) {
  // 53 random bits -> [0,1)
  std::uint64_t a = g(), b = g();
  double u = static_cast<double>(((a << 32) | b) >> 11) * 0x1.0p-53;
  return static_cast<T>(lo + (hi - lo) * u);
}

template <typename T>
void shuffle_indices(std::vector<T>& v, std::mt19937& g) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = uniform_u32(g, static_cast<std::uint32_t>(i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace ibp
