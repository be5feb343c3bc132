#pragma once

#include <cstdint>
#include <random>

namespace kdret {

// Seeded generator with a fully specified output sequence.
//
// The engine is std::mt19937_64 (its sequence is fixed by the standard). The
// conversions below are ours, so results do not depend on the standard
// library's distribution implementations:
//   uniform01()        = (next() >> 11) * 2^-53            in [0, 1)
//   uniform(lo, hi)    = lo + (hi - lo) * uniform01()
//   below(n)           = rejection-sampled next() mod n    in [0, n)
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = next();
    while (x >= limit) x = next();
    return x % n;
  }

  // Fisher-Yates, last index first.
  template <typename Vec>
  void shuffle(Vec& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace kdret
