#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "cfil/shape.hpp"

namespace cfil {

/// Deterministic random stream. The engine is std::mt19937_64, whose output
/// sequence is fixed by the C++ standard; every conversion to doubles,
/// normals and integer ranges is done here rather than with the standard
/// distributions, whose algorithms vary between library vendors.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller (one draw per call, no caching).
  double normal();
  /// Uniform integer in [0, bound), rejection-sampled.
  std::uint64_t below(std::uint64_t bound);

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      const auto j = below(i);
      std::iter_swap(first + static_cast<std::ptrdiff_t>(i - 1), first + static_cast<std::ptrdiff_t>(j));
    }
  }

  /// Independent child stream keyed by (seed, stream id).
  SeededRng derive(std::uint64_t stream) const;

  /// Engine state as text, for checkpoints.
  std::string state() const;
  void restore(const std::string& state);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace cfil
