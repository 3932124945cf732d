#pragma once

#include <cstdint>
#include <random>

namespace bdgp {

/// SplitMix64 finaliser; used to derive independent stream seeds.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Seed of the stream identified by (master, purpose, a, b).
constexpr std::uint64_t stream_seed(std::uint64_t master, std::uint64_t purpose, std::uint64_t a = 0,
                                    std::uint64_t b = 0) noexcept {
  return splitmix64(splitmix64(splitmix64(splitmix64(master) ^ purpose) ^ a) ^ b);
}

/// mt19937_64 with hand-rolled uniform and Box-Muller normal draws, so the
/// output sequence does not depend on the standard library's distribution
/// implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace bdgp
