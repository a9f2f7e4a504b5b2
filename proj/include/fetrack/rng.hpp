#pragma once

// Counter-based deterministic RNG. Every draw is a pure function of
// (seed, counter), so streams are reproducible regardless of scheduling and
// sub-streams can be split by tag without coordination.

#include <cstdint>
#include <cmath>

namespace fetrack {

// SplitMix64 finalizer; full-period bijection on 64-bit counters.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t rng_word(std::uint64_t seed, std::uint64_t counter) {
  return mix64(seed ^ mix64(counter));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
      : seed_(mix64(seed) ^ mix64(~stream)), counter_(0) {}

  // Derives an independent generator; child streams never collide with the
  // parent's own counter sequence.
  Rng split(std::uint64_t tag) const { return Rng(seed_, mix64(tag) | 1ull); }

  std::uint64_t next_u64() { return rng_word(seed_, counter_++); }

  // Uniform in [0, 1), 53-bit resolution.
  double next_uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double next_uniform(double lo, double hi) {
    return lo + (hi - lo) * next_uniform();
  }

  // Box-Muller; consumes exactly two words per draw so streams stay aligned.
  double next_gaussian() {
    const double u1 = (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;  // (0,1)
    const double u2 = next_uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  std::int64_t next_index(std::int64_t n) {
    return static_cast<std::int64_t>(next_u64() % static_cast<std::uint64_t>(n));
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

}  // namespace fetrack
