#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>

#include "appvae/errors.hpp"
#include "appvae/util.hpp"

namespace appvae {

inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// SplitMix64: a 64-bit counter-based generator. The state is a plain counter
// advanced by a fixed odd constant; each output is a bijective mix of the
// counter, so distinct seeds give independent-looking streams. Sampling
// transforms (inverse-CDF exponential, Box-Muller normal) are implemented
// here rather than via <random> so that identical seeds produce identical
// streams on every platform and standard library.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in [0, n) by rejection; unbiased for any n > 0.
  std::uint64_t bounded(std::uint64_t n) {
    if (n == 0) throw ValidationError("bounded(0) is undefined");
    const std::uint64_t threshold = (-n) % n;
    for (;;) {
      const std::uint64_t x = next_u64();
      if (x >= threshold) return x % n;
    }
  }

  // Standard normal via Box-Muller; the second deviate is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  void fill_normal(std::span<double> out) {
    for (double& x : out) x = normal();
  }

  // Exponential with the given rate via inverse CDF; result is >= 0.
  double exponential(double rate) {
    if (!(rate > 0.0)) throw ValidationError("exponential rate must be positive");
    return -std::log1p(-uniform()) / rate;
  }

  // Draw an index from a probability vector (assumed to sum to ~1).
  int categorical(std::span<const double> probs) {
    const double u = uniform();
    double acc = 0.0;
    int last_positive = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      if (probs[i] > 0.0) last_positive = static_cast<int>(i);
      acc += probs[i];
      if (u < acc) return static_cast<int>(i);
    }
    return last_positive;
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Seed derivation for independent sub-streams, e.g. per (seed, sequence)
// or per (seed, epoch, batch). Chain calls to derive nested streams.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t key) {
  return mix64(mix64(seed) ^ (key + 0x9E3779B97F4A7C15ULL));
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  return derive_seed(seed, fnv1a64(tag));
}

}  // namespace appvae
