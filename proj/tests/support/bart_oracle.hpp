#pragma once

// Brute-force oracle for the BART grow/prune acceptance decomposition on a
// tiny dataset. Everything here is computed independently of the sampler:
// leaf marginal likelihoods by numeric quadrature over the leaf mean, tree
// priors and proposal probabilities directly from their definitions.

#include <cmath>
#include <vector>

#include "npfuse/bart.hpp"

namespace bart_oracle {

using npfuse::Matrix;
using npfuse::Vector;
using npfuse::bart::BartConfig;

// log integral of prod_i N(r_i | mu, sigma^2) * N(mu | 0, sigma_mu^2) dmu by
// composite Simpson quadrature on a wide bracket.
inline double leaf_log_marginal_quadrature(const std::vector<double>& resid, double sigma,
                                           double sigma_mu) {
  const int n_points = 40001;
  const double half_width = 12.0 * std::max(sigma_mu, sigma);
  const double lo = -half_width, hi = half_width;
  const double h = (hi - lo) / (n_points - 1);

  auto log_integrand = [&](double mu) {
    double ll = -0.5 * mu * mu / (sigma_mu * sigma_mu) -
                std::log(sigma_mu) - 0.5 * std::log(2.0 * M_PI);
    for (double r : resid)
      ll += -0.5 * (r - mu) * (r - mu) / (sigma * sigma) - std::log(sigma) -
            0.5 * std::log(2.0 * M_PI);
    return ll;
  };

  // Stabilize around the maximum of the log-integrand.
  double peak = -1e300;
  for (int i = 0; i < n_points; ++i)
    peak = std::max(peak, log_integrand(lo + i * h));

  double sum = 0.0;
  for (int i = 0; i < n_points; ++i) {
    const double w = (i == 0 || i == n_points - 1) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
    sum += w * std::exp(log_integrand(lo + i * h) - peak);
  }
  return peak + std::log(sum * h / 3.0);
}

struct OracleEval {
  double log_prior_ratio = 0.0;
  double log_ml_ratio = 0.0;
  double log_proposal_ratio = 0.0;
};

// Grow of the root stump with rule (x <= cut) on a one-covariate dataset.
inline OracleEval grow_from_stump(const Matrix& x, const Vector& resid, double cut,
                                  double sigma, const BartConfig& cfg, double sigma_mu,
                                  int n_cutpoints) {
  OracleEval ev;

  const double p_split_d0 = cfg.alpha;  // alpha * (1+0)^(-beta)
  const double p_nosplit_d0 = 1.0 - cfg.alpha;
  const double p_nosplit_d1 = 1.0 - cfg.alpha * std::pow(2.0, -cfg.beta_depth);
  ev.log_prior_ratio = std::log(p_split_d0) + 2.0 * std::log(p_nosplit_d1) -
                       std::log(p_nosplit_d0) - std::log(1.0) -
                       std::log(static_cast<double>(n_cutpoints));

  std::vector<double> all, left, right;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    all.push_back(resid[i]);
    (x(i, 0) <= cut ? left : right).push_back(resid[i]);
  }
  ev.log_ml_ratio = leaf_log_marginal_quadrature(left, sigma, sigma_mu) +
                    leaf_log_marginal_quadrature(right, sigma, sigma_mu) -
                    leaf_log_marginal_quadrature(all, sigma, sigma_mu);

  // Forward: from a stump the grow move is certain, one leaf, one covariate,
  // n_cutpoints cut values. Reverse: prune with probability p_prune over the
  // single prunable node of the grown tree.
  const double q_forward = 1.0 * 1.0 * 1.0 / static_cast<double>(n_cutpoints);
  const double q_reverse = cfg.p_prune * 1.0;
  ev.log_proposal_ratio = std::log(q_reverse) - std::log(q_forward);
  return ev;
}

// Prune of a single-split tree back to the stump: exact negation of the
// corresponding grow decomposition, with the proposal roles swapped.
inline OracleEval prune_to_stump(const Matrix& x, const Vector& resid, double cut, double sigma,
                                 const BartConfig& cfg, double sigma_mu, int n_cutpoints) {
  const OracleEval grow = grow_from_stump(x, resid, cut, sigma, cfg, sigma_mu, n_cutpoints);
  OracleEval ev;
  ev.log_prior_ratio = -grow.log_prior_ratio;
  ev.log_ml_ratio = -grow.log_ml_ratio;
  // Forward: pick the one prunable node with probability p_prune. Reverse:
  // grow from the stump (certain), one leaf, one covariate, n_cutpoints cuts.
  const double q_forward = cfg.p_prune * 1.0;
  const double q_reverse = 1.0 / static_cast<double>(n_cutpoints);
  ev.log_proposal_ratio = std::log(q_reverse) - std::log(q_forward);
  return ev;
}

}  // namespace bart_oracle
