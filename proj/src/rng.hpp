#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace regleak {

// std::mt19937_64 output is pinned by the standard, but the standard
// distributions are not.  Everything downstream of a seed goes through the
// hand-rolled draws below so fixtures decode identically across toolchains.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Unbiased integer in [0, n).
  uint64_t below(uint64_t n) {
    if (n == 0) return 0;
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v;
    do {
      v = engine_();
    } while (v >= limit);
    return v % n;
  }

  // Uniform in [0, 1) with 53-bit resolution.
  double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  bool chance(double p) {
    if (p <= 0.0) return false;
    if (p >= 1.0) return true;
    return unit() < p;
  }

  // Box-Muller; the second variate is discarded to keep draw counts
  // independent of call history.
  double normal(double mu, double sigma) {
    double u1 = unit();
    while (u1 == 0.0) u1 = unit();
    double u2 = unit();
    double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    return mu + sigma * z;
  }

  // Derived substream: fork(k) sequences never collide with the parent for
  // distinct k because the seed is remixed through splitmix64.
  Rng fork(uint64_t stream) {
    uint64_t x = engine_() ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return Rng(x);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace regleak
