#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace semprint {

/// SplitMix64 output function.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Counter-based generator: every draw is a pure function of
/// (seed, domain, stream, counter), so results do not depend on call order.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t bits(std::uint64_t domain, std::uint64_t stream, std::uint64_t counter) const {
    std::uint64_t h = splitmix64(seed_);
    h = splitmix64(h ^ domain);
    h = splitmix64(h ^ stream);
    return splitmix64(h ^ counter);
  }

  /// Uniform on the open interval (0, 1) with 53 random bits.
  double uniform(std::uint64_t domain, std::uint64_t stream, std::uint64_t counter) const {
    return (static_cast<double>(bits(domain, stream, counter) >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal by Box-Muller from counters 2c and 2c+1.
  double normal(std::uint64_t domain, std::uint64_t stream, std::uint64_t counter) const {
    const double u1 = uniform(domain, stream, 2 * counter);
    const double u2 = uniform(domain, stream, 2 * counter + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::uint64_t seed_;
};

}  // namespace semprint
