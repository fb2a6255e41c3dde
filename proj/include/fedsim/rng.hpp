#pragma once

// Portable seedable random source. The standard <random> distributions are
// implementation-defined, so every sampler here is spelled out to keep
// partitions and trajectories reproducible across toolchains.
//
// Engine: xoshiro256** (Blackman & Vigna), state seeded with splitmix64.
// Normals: Box-Muller (cosine branch only). Gamma: Marsaglia-Tsang with the
// U^(1/a) boost for shape < 1.

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

namespace fedsim {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& word : state_) word = splitmix64(sm);
  }

  // Independent stream derived from a base seed and a tuple of tags, e.g.
  // (seed, round, client id, purpose). Streams with different tags do not
  // share state, which keeps parallel client updates order-independent.
  static Rng keyed(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t h = seed;
    std::uint64_t mixed = splitmix64(h);
    for (std::uint64_t tag : tags) {
      std::uint64_t s = mixed ^ (tag + 0x632BE59BD9B4E019ULL);
      mixed = splitmix64(s);
    }
    return Rng(mixed);
  }

  std::uint64_t next_u64() {
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

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in (0, 1).
  double uniform_open() {
    double u;
    do {
      u = uniform();
    } while (u == 0.0);
    return u;
  }

  // Unbiased integer in [0, bound) by rejection.
  std::uint64_t below(std::uint64_t bound) {
    if (bound <= 1) return 0;
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % bound;
  }

  double normal() {
    const double u1 = uniform_open();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  double gamma(double shape) {
    if (shape < 1.0) {
      const double u = uniform_open();
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x;
      double v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform_open();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  // Symmetric Dirichlet(concentration * 1_k).
  std::vector<double> dirichlet(std::size_t k, double concentration) {
    std::vector<double> draw(k);
    double total = 0.0;
    for (auto& g : draw) {
      g = gamma(concentration);
      total += g;
    }
    if (total <= 0.0) {
      // All gammas underflowed (tiny concentration): fall back to a vertex.
      std::fill(draw.begin(), draw.end(), 0.0);
      draw[below(k)] = 1.0;
      return draw;
    }
    for (auto& g : draw) g /= total;
    return draw;
  }

  // Fisher-Yates.
  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = below(i);
      std::swap(items[i - 1], items[j]);
    }
  }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    shuffle(std::span<T>(items));
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::array<std::uint64_t, 4> state_{};
};

// Stream purposes used with Rng::keyed.
namespace stream {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kSampling = 2;
inline constexpr std::uint64_t kLocal = 3;
inline constexpr std::uint64_t kServer = 4;
inline constexpr std::uint64_t kData = 5;
}  // namespace stream

}  // namespace fedsim
