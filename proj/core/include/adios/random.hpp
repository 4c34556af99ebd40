#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace adios {

/// Seeded RNG with named sub-streams. All randomness in the artifact flows
/// from one top-level seed; components derive independent streams by name so
/// they can be reseeded without disturbing each other. Draw helpers avoid
/// std::*_distribution, whose output is implementation-defined.
class Rng {
public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  /// Stream derived from (seed, name, salt...). FNV-1a over the name keeps
  /// distinct streams decorrelated.
  static Rng stream(uint64_t seed, const std::string& name, uint64_t a = 0, uint64_t b = 0) {
    uint64_t h = 1469598103934665603ull;
    auto mix = [&h](uint64_t v) {
      for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xff;
        h *= 1099511628211ull;
      }
    };
    for (char c : name) {
      h ^= static_cast<uint8_t>(c);
      h *= 1099511628211ull;
    }
    mix(seed);
    mix(a);
    mix(b);
    return Rng(h);
  }

  uint64_t next_u64() {
    uint64_t hi = engine_();
    uint64_t lo = engine_();
    return (hi << 32) | (lo & 0xffffffffull);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Rejection sampling keeps it unbiased.
  int64_t uniform_int(int64_t n) {
    if (n <= 1) return 0;
    uint64_t un = static_cast<uint64_t>(n);
    uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return static_cast<int64_t>(x % un);
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 0;
    while (u1 <= 0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * M_PI * u2);
    have_spare_ = true;
    return r * std::cos(2.0 * M_PI * u2);
  }

  /// Fisher-Yates shuffle of indices 0..n-1.
  std::vector<int64_t> permutation(int64_t n) {
    std::vector<int64_t> p(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) p[static_cast<size_t>(i)] = i;
    for (int64_t i = n - 1; i > 0; --i)
      std::swap(p[static_cast<size_t>(i)], p[static_cast<size_t>(uniform_int(i + 1))]);
    return p;
  }

private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0;
};

}  // namespace adios
