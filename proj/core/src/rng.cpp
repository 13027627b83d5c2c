#include "node_adapter/rng.hpp"

#include <cmath>
#include <numbers>

namespace node_adapter {

namespace {
constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;
__extension__ typedef unsigned __int128 u128;
}

std::uint64_t SplitMix64::mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

SplitMix64 SplitMix64::substream(std::uint64_t tag) const noexcept {
  return SplitMix64(mix64(state_ ^ mix64(tag + kGamma)));
}

std::uint64_t SplitMix64::next() noexcept {
  state_ += kGamma;
  return mix64(state_);
}

double SplitMix64::uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

std::size_t SplitMix64::index(std::size_t n) noexcept {
  // Lemire's multiply-shift; the bias for n << 2^64 is negligible and the
  // mapping is fully specified, unlike std::uniform_int_distribution.
  const u128 m = static_cast<u128>(next()) * n;
  return static_cast<std::size_t>(m >> 64);
}

double SplitMix64::normal() noexcept {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

}  // namespace node_adapter
