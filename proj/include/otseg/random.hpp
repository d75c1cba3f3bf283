#pragma once

#include <cstdint>
#include <vector>

namespace otseg {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// Seed for stream `k` derived from a base seed; streams are independent of evaluation order.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t k) noexcept {
  return mix64(mix64(seed) ^ mix64(k + 0x632be59bd9b4e019ull));
}

/// SplitMix64 stream with portable helpers (the std distributions are implementation-defined).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) noexcept : state_(seed) {}

  std::uint64_t next() noexcept {
    state_ += 0x9e3779b97f4a7c15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform integer in [0, bound), bound > 0. Unbiased (rejection).
  std::uint64_t below(std::uint64_t bound) noexcept;

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller.
  double normal() noexcept;

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// `count` distinct indices from [0, population), ascending (Floyd's algorithm).
/// count == population returns 0..population-1.
std::vector<std::size_t> sample_without_replacement(std::size_t population, std::size_t count,
                                                    Rng& rng);

}  // namespace otseg
