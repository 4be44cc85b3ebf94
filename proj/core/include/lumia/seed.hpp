#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace lumia {

/// Derives an independent 64-bit seed from a base seed, a stage name and a
/// list of indices (stream, layer, repeat, ...). Stable across platforms.
std::uint64_t derive_seed(std::uint64_t base, std::string_view stage,
                          std::initializer_list<std::uint64_t> indices = {});

/// Seeded generator with portable distributions. std::*_distribution output
/// is implementation-defined, so anything feeding a bit-exact artifact goes
/// through these helpers instead.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform();
  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller (one draw per call, no caching).
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  template <typename It>
  void shuffle(It first, It last) {
    auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      std::uint64_t j = below(i);
      std::swap(first[i - 1], first[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace lumia
