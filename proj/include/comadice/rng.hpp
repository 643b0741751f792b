#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace comadice {

/// Mixes a seed with a stream index so independent streams (trajectories,
/// episodes, sweep cells) can be derived from one user seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Seeded generator with platform-independent draws (no std distributions).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n) {
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
  }

  /// Samples an index from unnormalized non-negative weights.
  template <typename Weights>
  std::size_t categorical(const Weights& w) {
    double total = 0.0;
    for (auto x : w) total += x;
    double u = uniform() * total;
    std::size_t last = 0;
    std::size_t i = 0;
    for (auto x : w) {
      if (x > 0.0) {
        last = i;
        if (u < x) return i;
        u -= x;
      }
      ++i;
    }
    return last;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace comadice
