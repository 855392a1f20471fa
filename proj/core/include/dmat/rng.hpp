#pragma once

#include <cmath>
#include <cstdint>

namespace dmat {

// splitmix64: tiny, well-mixed, and bit-stable everywhere. The standard
// <random> engines are portable but the *distributions* are not (their output
// sequences are implementation-defined), so all sampling is built directly on
// this generator.
inline uint64_t splitmix64(uint64_t& state) {
  state += 0x9E3779B97F4A7C15ull;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : state_(seed) {
    // flush the first output so seed=0 and seed=1 streams diverge immediately
    (void)splitmix64(state_);
  }

  // independent stream derived from (seed, index); order-independent, so
  // per-sample generation can be parallelized or resumed
  static Rng derive(uint64_t seed, uint64_t stream) {
    uint64_t s = seed;
    uint64_t a = splitmix64(s);
    s = a ^ (stream * 0xD6E8FEB86659FD93ull + 0xCA01F9DD57ull);
    return Rng(splitmix64(s));
  }

  uint64_t next_u64() { return splitmix64(state_); }

  // [0, 1), 53-bit mantissa
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  uint64_t uniform_int(uint64_t n) { return next_u64() % n; }

  // standard normal, Box-Muller with pair caching
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    // avoid log(0)
    if (u1 < 1e-300) u1 = 1e-300;
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace dmat
