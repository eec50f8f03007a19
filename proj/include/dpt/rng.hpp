#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace dpt {

// Counter-based deterministic generator (splitmix64 finalizer over key+counter).
// Every stochastic operation takes one of these explicitly; there is no global
// generator. fork() derives an independent stream keyed by an id, so per-sample
// streams do not depend on iteration order.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : key_(mix(seed ^ 0x9e3779b97f4a7c15ull)) {}

  uint64_t next_u64() { return mix(key_ + (++counter_) * 0x9e3779b97f4a7c15ull); }

  // Uniform in [0, 1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), n > 0. Multiply-shift bounding.
  int64_t uniform_int(int64_t n) {
    return int64_t((static_cast<__uint128_t>(next_u64()) * static_cast<__uint128_t>(n)) >> 64);
  }

  // Standard normal via Box-Muller.
  double normal() {
    double u1 = uniform(), u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  // Independent child stream; depends only on (seed, stream), not on how much
  // of this generator has been consumed.
  Rng fork(uint64_t stream) const {
    Rng child;
    child.key_ = mix(key_ ^ mix(stream ^ 0xda942042e4dd58b5ull));
    return child;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = size_t(uniform_int(int64_t(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

  static uint64_t mix(uint64_t x) {
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ull;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebull;
    x ^= x >> 31;
    return x;
  }

 private:
  uint64_t key_ = 0;
  uint64_t counter_ = 0;
};

}  // namespace dpt
