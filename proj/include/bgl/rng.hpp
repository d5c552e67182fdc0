// Deterministic random number utilities. All distributions are implemented
// explicitly (not via <random> distribution classes, whose algorithms are
// implementation-defined) so that a seed fixes the output stream exactly.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace bgl {

// SplitMix64, used both as a stream generator and as the seed-derivation hash.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Seed for replica r derived from a base seed. Adding replicas never perturbs
// the streams of existing ones.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t s = base ^ (0x61c8864680b583ebULL * (index + 1));
  return splitmix64(s);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t bits() { return engine_(); }

  // Uniform in [0,1).
  double uniform() { return (bits() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  // Standard normal via Box-Muller; caches the second variate.
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double c = std::cos(2.0 * M_PI * u2);
    const double s = std::sin(2.0 * M_PI * u2);
    cached_ = r * s;
    have_cached_ = true;
    return r * c;
  }

  // Poisson by inversion in chunks small enough that exp(-chunk) stays well
  // inside the normal double range; Poisson(a+b) = Poisson(a) + Poisson(b).
  // Exact in distribution at any mean, fast enough for desk-scale means.
  std::uint64_t poisson(double mean) {
    std::uint64_t total = 0;
    while (mean > 500.0) {
      total += poisson_inversion(500.0);
      mean -= 500.0;
    }
    return total + poisson_inversion(mean);
  }

  // Uniform point on the unit sphere.
  void unit_sphere(double& x, double& y, double& z) {
    const double c = 2.0 * uniform() - 1.0;
    const double phi = 2.0 * M_PI * uniform();
    const double s = std::sqrt(std::max(0.0, 1.0 - c * c));
    x = s * std::cos(phi);
    y = s * std::sin(phi);
    z = c;
  }

 private:
  std::uint64_t poisson_inversion(double mean) {
    const double target = uniform();
    double p = std::exp(-mean);
    double cdf = p;
    std::uint64_t k = 0;
    const std::uint64_t cap =
        static_cast<std::uint64_t>(mean + 60.0 * std::sqrt(mean + 1.0) + 100.0);
    while (cdf < target && k < cap) {
      ++k;
      p *= mean / static_cast<double>(k);
      cdf += p;
    }
    return k;
  }

  std::mt19937_64 engine_;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

}  // namespace bgl
