#pragma once

#include <cstdint>

namespace ikno {

/// splitmix64 finalizer.
constexpr std::uint64_t splitmix64_mix(std::uint64_t z) noexcept {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// splitmix64 generator; identical streams on every platform.
class Rng64 {
 public:
  explicit constexpr Rng64(std::uint64_t seed) noexcept : state_(seed) {}

  constexpr std::uint64_t next_u64() noexcept {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) with 53 random bits.
  constexpr double uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  constexpr double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Multiply-shift; bias is below 2^-64 · n.
  std::uint64_t below(std::uint64_t n) noexcept {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  /// Child generator for stream `index`: seeded with splitmix64(seed ⊕ index).
  static constexpr Rng64 child(std::uint64_t seed, std::uint64_t index) noexcept {
    return Rng64(splitmix64_mix(seed ^ index));
  }

  constexpr std::uint64_t state() const noexcept { return state_; }

 private:
  std::uint64_t state_;
};

}  // namespace ikno
