#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace rmn {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// mt19937_64 engine with hand-rolled output transforms. The engine sequence
// is pinned by the standard and the transforms avoid <random> distributions,
// whose output is implementation-defined, so identical seeds give identical
// streams on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::size_t below(std::size_t n) { return static_cast<std::size_t>(engine_() % n); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // Gumbel(0,1) via -log(-log(U)), U clamped away from both endpoints with
  // eps = 1e-20. 1-1e-20 is not representable in f64 (it rounds to 1), so the
  // upper clamp lands on the largest double below 1 instead.
  static double gumbel_transform(double u) {
    if (u < 1e-20) u = 1e-20;
    const double upper = std::nextafter(1.0, 0.0);
    if (u > upper) u = upper;
    return -std::log(-std::log(u));
  }

  double gumbel() { return gumbel_transform(uniform()); }

  // Fisher-Yates with explicit modulo draws; std::shuffle is
  // implementation-defined given the same engine.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  // Derive an independent child stream, e.g. per (epoch, sample) pair.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    return splitmix64(seed ^ splitmix64(a ^ splitmix64(b + 0x51ed2701ull)));
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace rmn
