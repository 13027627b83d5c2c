#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>

namespace node_adapter {

/// SplitMix64: a counter-based 64-bit generator. The k-th output is
/// mix64(seed + k * 0x9E3779B97F4A7C15), so streams are reproducible from
/// (seed, k) alone and trivially ported to other languages.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  static std::uint64_t mix64(std::uint64_t z) noexcept;

  /// Independent generator keyed by `tag`; used to give each generated
  /// component (means, biases, support noise, ...) its own stream.
  SplitMix64 substream(std::uint64_t tag) const noexcept;

  std::uint64_t next() noexcept;
  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n); n must be > 0.
  std::size_t index(std::size_t n) noexcept;
  /// Standard normal via Box-Muller (the sine branch is cached).
  double normal() noexcept;

  template <class T>
  void shuffle(std::span<T> items) noexcept {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = index(i);
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace node_adapter
