#pragma once

#include <vector>

#include "npfuse/common.hpp"

namespace npfuse {

double digamma(double x);
double trigamma(double x);

// Regularized lower incomplete gamma P(a, x).
double gamma_p(double a, double x);

// Quantile of the chi-square distribution with df degrees of freedom.
double chisq_quantile(double p, double df);

double normal_cdf(double x);

inline double logit(double p) { return std::log(p / (1.0 - p)); }
inline double inv_logit(double x) {
  if (x >= 0.0) {
    double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

double mean(const Vector& v);
// Sample variance with n-1 denominator.
double sample_variance(const Vector& v);
double sample_sd(const Vector& v);
double pearson_corr(const Vector& a, const Vector& b);

// Linear-interpolated quantile of unsorted data, q in [0,1].
double quantile(std::vector<double> values, double q);

}  // namespace npfuse
