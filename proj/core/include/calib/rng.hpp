#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace calib {

// Counter-based pseudo-random generator. Every draw hashes (key, counter), so
// streams derived from the same seed are decorrelated and any stream can be
// recreated independently of the others. Output is reproducible for a fixed
// (seed, stream) within one build; bit-reproducibility across compilers is not
// promised.
class Rng {
public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
      : key_(mix(mix(seed) + 0x9E3779B97F4A7C15ull * (stream + 1))) {}

  std::uint64_t next_u64() { return mix(key_ + 0x9E3779B97F4A7C15ull * ++counter_); }

  // Uniform in [0,1) with 53-bit resolution.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Exponential(1) by inversion. 1-u stays positive, so the result is finite.
  double next_exponential() { return -std::log1p(-next_double()); }

  // Unbiased integer in [0, bound) by masked rejection.
  std::uint64_t next_below(std::uint64_t bound) {
    if (bound < 2) return 0;
    const std::uint64_t mask = ~0ull >> std::countl_zero(bound - 1);
    for (;;) {
      const std::uint64_t v = next_u64() & mask;
      if (v < bound) return v;
    }
  }

  // Index drawn from a row of nonnegative weights by inverse CDF.
  int next_categorical(std::span<const double> weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    const double u = next_double() * total;
    double cum = 0.0;
    for (std::size_t j = 0; j + 1 < weights.size(); ++j) {
      cum += weights[j];
      if (u < cum) return static_cast<int>(j);
    }
    return static_cast<int>(weights.size()) - 1;
  }

  // Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[next_below(i)]);
    }
  }

private:
  // SplitMix64 finalizer.
  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ull;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBull;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace calib
