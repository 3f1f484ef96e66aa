#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "npfuse/common.hpp"

namespace npfuse {

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
}  // namespace detail

// Deterministic RNG with hand-rolled samplers. All randomness in the library
// flows through this class so that a (seed, stream) pair pins the full draw
// sequence regardless of platform or thread scheduling. Streams for parallel
// work units (replications, bootstrap replicates, chains) are derived by
// hashing (seed, stream_id), never by sharing one engine.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(mix_seed(seed)) {}

  static std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t s = seed;
    std::uint64_t a = detail::splitmix64(s);
    s ^= stream * 0x9e3779b97f4a7c15ULL + 0x632be59bd9b4e019ULL;
    std::uint64_t b = detail::splitmix64(s);
    return a ^ (b + 0x9e3779b97f4a7c15ULL + (a << 6) + (a >> 2));
  }

  static Rng derive(std::uint64_t seed, std::uint64_t stream) {
    return Rng(derive_seed(seed, stream));
  }

  // Uniform on (0,1); never returns an exact endpoint.
  double uniform() {
    return (static_cast<double>(eng_() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
  }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  // Integer in [0, n). Unbiased via rejection.
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) fail(Err::ConfigInvalid, "uniform_int(0)");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = eng_();
    } while (x >= limit);
    return x % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller, no cached spare: exactly two uniforms per variate.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  double normal(double mu, double sd) { return mu + sd * normal(); }

  double exponential(double mean = 1.0) { return -mean * std::log(uniform()); }

  // Marsaglia-Tsang; shape boosting for shape < 1.
  double gamma(double shape, double scale = 1.0) {
    if (shape <= 0.0 || scale <= 0.0) fail(Err::ConfigInvalid, "gamma: nonpositive parameter");
    if (shape < 1.0) {
      double u = uniform();
      return gamma(shape + 1.0, scale) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return scale * d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return scale * d * v;
    }
  }

  double chisq(double df) { return gamma(0.5 * df, 2.0); }

  double beta(double a, double b) {
    double x = gamma(a);
    double y = gamma(b);
    return x / (x + y);
  }

  double inv_gamma(double shape, double rate) { return rate / gamma(shape, 1.0); }

  // Standard normal truncated to x >= a. Plain rejection near the bulk,
  // Robert (1995) exponential rejection in the tail.
  double trunc_std_normal_left(double a) {
    if (a < 0.45) {
      for (;;) {
        double x = normal();
        if (x >= a) return x;
      }
    }
    const double lambda = 0.5 * (a + std::sqrt(a * a + 4.0));
    for (;;) {
      double x = a + exponential(1.0 / lambda);
      double d = x - lambda;
      if (std::log(uniform()) <= -0.5 * d * d) return x;
    }
  }

  // N(mu, sd^2) truncated to x >= lower.
  double trunc_normal_left(double mu, double sd, double lower) {
    return mu + sd * trunc_std_normal_left((lower - mu) / sd);
  }

  // N(mu, sd^2) truncated to x <= upper.
  double trunc_normal_right(double mu, double sd, double upper) {
    return mu - sd * trunc_std_normal_left((mu - upper) / sd);
  }

  std::uint64_t raw() { return eng_(); }

 private:
  static std::uint64_t mix_seed(std::uint64_t seed) {
    std::uint64_t s = seed;
    return detail::splitmix64(s);
  }

  std::mt19937_64 eng_;
};

}  // namespace npfuse
