#pragma once

// Deterministic splitmix64 generator. Sampling-based verification and the
// simulator need streams that are reproducible across platforms and standard
// library versions, which std::mt19937 distributions are not.

#include <cstdint>

namespace gsf::rng {

class SplitMix64 {
 public:
  explicit SplitMix64(uint64_t seed) : s_(seed) {}

  uint64_t next() {
    uint64_t z = (s_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform01() { return double(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Derive an independent stream for sub-task `k`.
  SplitMix64 fork(uint64_t k) const {
    SplitMix64 r(s_ ^ (0x6a09e667f3bcc909ull + k * 0x9e3779b97f4a7c15ull));
    r.next();
    return r;
  }

 private:
  uint64_t s_;
};

}  // namespace gsf::rng
