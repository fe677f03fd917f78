#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string_view>

namespace lcnn {

/// splitmix64 finalizer; also used to expand a 64-bit seed into generator state.
constexpr std::uint64_t splitmix64(std::uint64_t& x) noexcept {
  std::uint64_t z = (x += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Seed for a named subsystem: splitmix64(seed XOR fnv1a64(name)).
/// Every random stream in the project is derived this way from the run seed.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view name) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ull;
  }
  std::uint64_t s = seed ^ h;
  return splitmix64(s);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) noexcept {
  std::uint64_t s = seed ^ (index * 0xD1B54A32D192ED03ull);
  return splitmix64(s);
}

/// xoshiro256** seeded through splitmix64. Distributions are implemented here
/// rather than taken from <random> so that streams are identical across
/// standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) noexcept : seed_(seed) {
    std::uint64_t x = seed;
    for (auto& s : state_) s = splitmix64(x);
  }

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() noexcept {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) {
    if (!(a < b)) throw std::invalid_argument("uniform: requires a < b");
    return a + (b - a) * uniform();
  }

  /// Like uniform(a, b) but returns a when the range is degenerate (a == b).
  double uniform_closed(double a, double b) {
    if (a == b) return a;
    return uniform(a, b);
  }

  /// Box-Muller, one variate per call (two uniforms consumed).
  double normal(double mu, double sigma) {
    if (!(sigma > 0)) throw std::invalid_argument("normal: requires sigma > 0");
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return mu + sigma * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Unbiased integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("below: n must be positive");
    const std::uint64_t limit = (~std::uint64_t{0}) - (~std::uint64_t{0}) % n;
    std::uint64_t r;
    do {
      r = next_u64();
    } while (r >= limit);
    return r % n;
  }

  bool bernoulli(double p) noexcept { return uniform() < p; }

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      const auto j = below(i);
      std::swap(first[i - 1], first[j]);
    }
  }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t seed_;
  std::array<std::uint64_t, 4> state_{};
};

}  // namespace lcnn
