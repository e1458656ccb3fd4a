#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace geomoe {

// Deterministic random stream.
//
// Engine: std::mt19937_64, whose output sequence is fixed by the C++ standard.
// All derived distributions (uniform, normal, gamma, beta, integer ranges,
// shuffles) are implemented here rather than through <random> distribution
// classes, because those are implementation-defined and differ between
// standard libraries. Identical seed therefore gives an identical stream on
// every conforming platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n) by rejection sampling.
  std::uint64_t uniform_int(std::uint64_t n);

  // Standard normal via Box-Muller; the second variate is cached.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Marsaglia-Tsang gamma(shape, 1).
  double gamma(double shape);

  // Beta(a, b) via two gamma draws.
  double beta(double a, double b);

  bool bernoulli(double p) { return uniform() < p; }

  // Fisher-Yates using uniform_int.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Child stream seed for (seed, stream) without touching this generator.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// SplitMix64 finalizer; also used for seed derivation and cheap hashing.
std::uint64_t splitmix64(std::uint64_t x);

// 64-bit FNV-1a over bytes.
std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t h = 0xcbf29ce484222325ULL);

}  // namespace geomoe
