#pragma once

// Deterministic random number generation.  All randomness in the library
// flows through Rng so that a run is reproducible from a single seed.
// Distribution transforms are written out explicitly (instead of using
// std::*_distribution) so the byte stream of results does not depend on the
// standard library implementation.

#include <cstdint>
#include <cmath>
#include <random>
#include <vector>

namespace synthipd {

// SplitMix64 step; used for seed scrambling and stream derivation.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Child stream seed: master seed advanced by the stream index.  Used to give
// every step / repetition / arm its own independent generator.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  std::uint64_t state = master;
  std::uint64_t first = splitmix64(state);
  state = first ^ (stream * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL);
  return splitmix64(state);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t state = seed;
    gen_.seed(splitmix64(state));
  }

  std::uint64_t next_u64() { return gen_(); }

  // Uniform on [0, 1) with 53-bit resolution.
  double uniform01() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Uniform on {0, ..., n-1}; n must be positive.
  std::size_t uniform_index(std::size_t n) {
    return std::size_t((unsigned __int128)(next_u64()) * n >> 64);
  }

  bool bernoulli(double p) { return uniform01() < p; }

  double exponential(double rate) {
    return -std::log(1.0 - uniform01()) / rate;
  }

  double normal(double mean, double sd) {
    // Box-Muller, cosine branch only; keeps the stream a pure function of
    // draw count.
    double u1 = 1.0 - uniform01();
    double u2 = uniform01();
    return mean + sd * std::sqrt(-2.0 * std::log(u1)) *
                      std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Fisher-Yates; avoids std::shuffle so the permutation is reproducible
  // across standard libraries.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = uniform_index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace synthipd
