#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace relmod {

/// splitmix64 finalizer; the standard way to turn correlated seeds into
/// well-mixed ones.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives an independent seed stream from a master seed plus stream tags.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                              std::uint64_t c = 0) {
  std::uint64_t h = splitmix64(seed ^ 0x243f6a8885a308d3ULL);
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ b);
  h = splitmix64(h ^ c);
  return h;
}

/// Uniform double in [0,1) using the top 53 bits of the engine output.
/// Engine output is fully specified by the standard, so values are
/// bit-portable across implementations.
inline double uniform_double(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform double in [lo, hi).
inline double uniform_double(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform_double(rng);
}

/// Uniform integer in [0, n). n must be > 0.
inline std::uint64_t uniform_index(std::mt19937_64& rng, std::uint64_t n) {
  // modulo bias is negligible for n << 2^64 and keeps the draw sequence simple
  return rng() % n;
}

/// Standard normal via Box-Muller; consumes exactly two engine outputs.
inline double normal_double(std::mt19937_64& rng) {
  double u1 = uniform_double(rng);
  double u2 = uniform_double(rng);
  if (u1 < 1e-300) u1 = 1e-300;
  constexpr double two_pi = 6.283185307179586476925286766559;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

/// Fisher-Yates shuffle driven by uniform_index so the permutation only
/// depends on the engine's output sequence.
template <typename T>
void deterministic_shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(uniform_index(rng, i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace relmod
