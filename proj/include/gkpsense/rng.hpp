// Counter-based random number generation. Each random draw is keyed by the
// coordinates that identify it (seed, sample, repeat, round, draw index), so
// results are reproducible regardless of evaluation order or worker count.
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace gkpsense {

// SplitMix64 finalizer; bijective on 64-bit words.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

struct RngKey {
  std::uint64_t seed = 0;
  std::uint64_t sample = 0;
  std::uint64_t repeat = 0;
  std::uint64_t round = 0;
  std::uint64_t draw = 0;

  constexpr std::uint64_t mix() const noexcept {
    std::uint64_t s = splitmix64(seed);
    s = splitmix64(s ^ splitmix64(sample));
    s = splitmix64(s ^ splitmix64(repeat + 0x1000));
    s = splitmix64(s ^ splitmix64(round + 0x2000));
    s = splitmix64(s ^ splitmix64(draw + 0x3000));
    return s;
  }
};

// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(const RngKey& key) noexcept {
  return static_cast<double>(key.mix() >> 11) * 0x1.0p-53;
}

// Standard normal via Box-Muller; consumes two sub-draws of the key.
inline double gaussian(const RngKey& key) noexcept {
  RngKey k1 = key;
  k1.draw = 2 * key.draw;
  RngKey k2 = key;
  k2.draw = 2 * key.draw + 1;
  const double u1 = uniform01(k1);
  const double u2 = uniform01(k2);
  // Guard the log against u1 == 0.
  const double r = std::sqrt(-2.0 * std::log(u1 + 0x1.0p-60));
  return r * std::cos(2.0 * std::numbers::pi * u2);
}

// Bernoulli draw: returns 1 with probability p.
inline int bernoulli(const RngKey& key, double p) noexcept {
  return uniform01(key) < p ? 1 : 0;
}

}  // namespace gkpsense
