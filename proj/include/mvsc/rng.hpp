#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace mvsc {

// Finalizer of splitmix64. Good avalanche, cheap, stateless.
inline std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Derives an independent sub-seed from (base, stream). Every randomized
// stage draws from its own stream so adding a stage never perturbs the
// draws of another.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  return splitmix64(base ^ splitmix64(stream + 0x51ED2701A9B3C44FULL));
}

// Deterministic generator with hand-rolled distributions. std::*_distribution
// is implementation-defined, which would tie artifact bytes to the standard
// library; these are pinned instead.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // One Box-Muller draw per call; the sine companion is discarded so the
  // stream consumed per call is fixed.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // Rejection-free modulo bias is negligible for n << 2^64 at desk scale,
    // but do it properly anyway.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v = engine_();
    while (v >= limit) v = engine_();
    return v % n;
  }

  // Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

// Stream tags for derive_seed. Keep values stable: they are part of what
// makes runs byte-reproducible.
enum class SeedStream : std::uint64_t {
  kModelInit = 1,
  kDataSynth = 2,
  kEmbeddings = 3,
  kShuffle = 4,
  kStubExtractor = 5,
  kHeadInit = 6,
};

inline std::uint64_t derive_seed(std::uint64_t base, SeedStream stream) {
  return derive_seed(base, static_cast<std::uint64_t>(stream));
}

}  // namespace mvsc
