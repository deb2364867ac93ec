#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "tlab/common.hpp"

namespace tlab {

// splitmix64 step, used to derive sub-seeds (per-epoch shuffles, per-row
// suite seeds) and as the seed-stable hash for held-out splits.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic random source: std::mt19937_64 (fully specified by the
// standard) with hand-rolled uniform/normal transforms so that a given seed
// produces a bit-identical sequence on every platform with the same libm.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  real uniform(real lo, real hi) {
    return static_cast<real>(lo + (hi - lo) * uniform01());
  }

  // Standard normal via Box-Muller; the second value of each pair is cached.
  double normal01() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform01();
    } while (u1 <= 0.0);
    double u2 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double t = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  real normal(real mean, real stddev) {
    return static_cast<real>(mean + stddev * normal01());
  }

  // Uniform integer in [0, n) by rejection, free of modulo bias.
  int64_t uniform_int(int64_t n) {
    check(n > 0, "uniform_int: n must be positive, got {}", n);
    uint64_t un = static_cast<uint64_t>(n);
    uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return static_cast<int64_t>(x % un);
  }

  void fill_normal(std::vector<real>& out, real mean, real stddev) {
    for (auto& v : out) v = normal(mean, stddev);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(static_cast<int64_t>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::string save_state() const;
  void load_state(const std::string& s);

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace tlab
