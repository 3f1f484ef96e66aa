#include "npfuse/mathx.hpp"

#include <algorithm>
#include <cmath>

namespace npfuse {

double digamma(double x) {
  // Recurrence into the asymptotic region, then the standard series.
  double result = 0.0;
  while (x < 10.0) {
    result -= 1.0 / x;
    x += 1.0;
  }
  const double ix = 1.0 / x;
  const double ix2 = ix * ix;
  result += std::log(x) - 0.5 * ix -
            ix2 * (1.0 / 12.0 - ix2 * (1.0 / 120.0 - ix2 * (1.0 / 252.0 - ix2 / 240.0)));
  return result;
}

double trigamma(double x) {
  double result = 0.0;
  while (x < 10.0) {
    result += 1.0 / (x * x);
    x += 1.0;
  }
  const double ix = 1.0 / x;
  const double ix2 = ix * ix;
  result += ix * (1.0 + 0.5 * ix + ix2 * (1.0 / 6.0 - ix2 * (1.0 / 30.0 - ix2 * (1.0 / 42.0 - ix2 / 30.0))));
  return result;
}

namespace {

double gamma_p_series(double a, double x) {
  double term = 1.0 / a;
  double sum = term;
  double ap = a;
  for (int i = 0; i < 500; ++i) {
    ap += 1.0;
    term *= x / ap;
    sum += term;
    if (std::abs(term) < std::abs(sum) * 1e-16) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

double gamma_q_contfrac(double a, double x) {
  const double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= 500; ++i) {
    double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 1e-16) break;
  }
  return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

}  // namespace

double gamma_p(double a, double x) {
  if (x <= 0.0) return 0.0;
  if (x < a + 1.0) return gamma_p_series(a, x);
  return 1.0 - gamma_q_contfrac(a, x);
}

double chisq_quantile(double p, double df) {
  require(p > 0.0 && p < 1.0 && df > 0.0, Err::ConfigInvalid, "chisq_quantile domain");
  // Wilson-Hilferty start, then bisection-safeguarded Newton on the CDF.
  double z = p < 0.5 ? -std::sqrt(-2.0 * std::log(2.0 * p)) : std::sqrt(-2.0 * std::log(2.0 * (1.0 - p)));
  double t = 1.0 - 2.0 / (9.0 * df) + z * std::sqrt(2.0 / (9.0 * df));
  double x = df * t * t * t;
  if (!(x > 0.0)) x = df;
  double lo = 0.0, hi = std::max(4.0 * df + 40.0, 4.0 * x + 10.0);
  while (gamma_p(0.5 * df, 0.5 * hi) < p) hi *= 2.0;
  for (int i = 0; i < 200; ++i) {
    double f = gamma_p(0.5 * df, 0.5 * x) - p;
    if (f > 0.0)
      hi = x;
    else
      lo = x;
    double dens = std::exp((0.5 * df - 1.0) * std::log(0.5 * x) - 0.5 * x - std::lgamma(0.5 * df)) * 0.5;
    double step = dens > 0.0 ? f / dens : 0.0;
    double next = x - step;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - x) < 1e-12 * (1.0 + x)) return next;
    x = next;
  }
  return x;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double mean(const Vector& v) {
  require(v.size() > 0, Err::EmptySample, "mean of empty vector");
  return v.mean();
}

double sample_variance(const Vector& v) {
  require(v.size() > 1, Err::DegenerateVariance, "sample_variance needs n >= 2");
  const double m = v.mean();
  return (v.array() - m).square().sum() / static_cast<double>(v.size() - 1);
}

double sample_sd(const Vector& v) { return std::sqrt(sample_variance(v)); }

double pearson_corr(const Vector& a, const Vector& b) {
  require(a.size() == b.size(), Err::LengthMismatch, "pearson_corr");
  const double ma = a.mean(), mb = b.mean();
  const double num = ((a.array() - ma) * (b.array() - mb)).sum();
  const double den = std::sqrt((a.array() - ma).square().sum() * (b.array() - mb).square().sum());
  return num / den;
}

double quantile(std::vector<double> values, double q) {
  require(!values.empty(), Err::EmptySample, "quantile of empty vector");
  std::sort(values.begin(), values.end());
  if (q <= 0.0) return values.front();
  if (q >= 1.0) return values.back();
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const double frac = pos - static_cast<double>(lo);
  if (lo + 1 >= values.size()) return values.back();
  return values[lo] * (1.0 - frac) + values[lo + 1] * frac;
}

}  // namespace npfuse
