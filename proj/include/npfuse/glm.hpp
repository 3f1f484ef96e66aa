#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "npfuse/common.hpp"
#include "npfuse/rng.hpp"

namespace npfuse {

enum class Family { Logistic, Linear, Beta };

struct GlmFit {
  Family family = Family::Linear;
  Vector coefficients;
  std::optional<double> dispersion;  // sigma for Linear, phi for Beta
  std::optional<Matrix> vcov;        // coefficient covariance (natural scale)
  bool converged = false;
  int iterations = 0;
  double log_likelihood = 0.0;
  // Per-iteration log-likelihood, recorded by the iterative fitters.
  std::vector<double> loglik_trace;
  // Covariance of [coefficients, log dispersion] used as the Metropolis
  // proposal shape; absent for families without dispersion when equal to vcov.
  std::optional<Matrix> vcov_sampling;

  Eigen::Index n_params() const {
    return coefficients.size() + (dispersion.has_value() ? 1 : 0);
  }
};

struct GlmControl {
  int max_iter = 100;
  double tol = 1e-8;  // on the score max-norm
  int max_halvings = 20;
};

GlmFit fit_logistic(const Matrix& X, const Vector& t,
                    const std::optional<Vector>& weights = std::nullopt,
                    const GlmControl& control = {});

GlmFit fit_linear(const Matrix& X, const Vector& y,
                  const std::optional<Vector>& weights = std::nullopt);

GlmFit fit_beta_regression(const Matrix& X, const Vector& p, const GlmControl& control = {});

// Log-likelihood and analytic score at an arbitrary parameter point. The
// parameter layout is [coefficients] for Logistic and [coefficients, log
// dispersion] for Linear and Beta, matching the MCMC sampling scale.
double glm_log_likelihood(Family family, const Matrix& X, const Vector& response,
                          const Vector& params,
                          const std::optional<Vector>& weights = std::nullopt);
Vector glm_score(Family family, const Matrix& X, const Vector& response, const Vector& params,
                 const std::optional<Vector>& weights = std::nullopt);

enum class PredictScale { LinearPredictor, Mean };

Vector predict(const GlmFit& fit, const Matrix& X_new, PredictScale scale);

struct PosteriorConfig {
  Eigen::Index n_draws = 1000;  // kept draws
  Eigen::Index burn_in = 1000;
  Eigen::Index thin = 1;
  double proposal_scale = 0.0;  // 0 => 2.38^2 / dim
  std::uint64_t seed = 0;
};

struct PosteriorDraws {
  Family family = Family::Linear;
  // n_draws x (p + 1 dispersion column when the family has one); the
  // dispersion column is on the natural (positive) scale.
  Matrix draws;
  Eigen::Index burn_in = 0;
  Eigen::Index thinning = 1;
  double acceptance_rate = 0.0;
  bool has_dispersion = false;

  Eigen::Index n_draws() const { return draws.rows(); }
  Eigen::Index n_coef() const { return draws.cols() - (has_dispersion ? 1 : 0); }
  Vector coef_row(Eigen::Index m) const { return draws.row(m).head(n_coef()).transpose(); }
};

// Random-walk Metropolis on the MLE-centered parameterization with flat
// priors on coefficients and on log dispersion. The chain starts at the MLE
// and uses proposal covariance (2.38^2/dim) * vcov_sampling.
PosteriorDraws posterior_sample(Family family, const Matrix& X, const Vector& response,
                                const PosteriorConfig& config,
                                const std::optional<Vector>& weights = std::nullopt);

// Random subsample (without replacement, row order preserved).
PosteriorDraws subsample_draws(const PosteriorDraws& draws, Eigen::Index m, Rng& rng);

Matrix predict(const PosteriorDraws& draws, const Matrix& X_new, PredictScale scale);

}  // namespace npfuse
