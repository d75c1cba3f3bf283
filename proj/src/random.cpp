#include "otseg/random.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

namespace otseg {

std::uint64_t Rng::below(std::uint64_t bound) noexcept {
  const std::uint64_t limit = -bound % bound;  // 2^64 mod bound
  for (;;) {
    const std::uint64_t x = next();
    // Accept x unless it falls into the final partial block.
    if (x >= limit) return x % bound;
  }
}

double Rng::normal() noexcept {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * 3.14159265358979323846 * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::vector<std::size_t> sample_without_replacement(std::size_t population, std::size_t count,
                                                    Rng& rng) {
  std::vector<std::size_t> out;
  if (count >= population) {
    out.resize(population);
    std::iota(out.begin(), out.end(), std::size_t{0});
    return out;
  }
  std::unordered_set<std::size_t> chosen;
  chosen.reserve(count * 2);
  out.reserve(count);
  for (std::size_t j = population - count; j < population; ++j) {
    const auto t = static_cast<std::size_t>(rng.below(j + 1));
    const std::size_t pick = chosen.insert(t).second ? t : j;
    if (pick == j) chosen.insert(j);
    out.push_back(pick);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace otseg
