#pragma once

#include <map>
#include <string>

#include "npfuse/data_model.hpp"
#include "npfuse/glm.hpp"

namespace npfuse {

enum class PwMethod { IPSW, PAPW, PAPP };

// Estimated pseudo-inclusion probabilities for the S_B rows. `values` has one
// row per posterior draw (a single row for frequentist fits), columns aligned
// with the S_B record order of the sample.
struct PseudoInclusion {
  PwMethod method = PwMethod::PAPW;
  Matrix values;
  std::map<std::string, double> diagnostics;

  Eigen::Index m() const { return values.rows(); }
  Vector single() const {
    require(values.rows() == 1, Err::DrawCountMismatch, "expected a single-vector PseudoInclusion");
    return values.row(0).transpose();
  }
};

// Solves the pseudo-maximum-likelihood estimating equation
//   U(beta) = sum_{S_B} x_i - sum_{S_R} pi(x_i; beta) x_i / pi^R_i = 0
// by damped Newton from beta = 0.
GlmFit solve_pmle(const CombinedSample& sample, CovariateSet covariates,
                  const GlmControl& control = {});

// U(beta) for the PMLE system; exposed so the root can be re-checked.
Vector pmle_residual(const CombinedSample& sample, CovariateSet covariates, const Vector& beta);

// pi^B_i = pi^R_i * p_i / (1 - p_i) from fitted membership probabilities
// p = P(Z=1 | x*) on the S_B rows (one row per draw). A strict call treats
// pi^B >= 1 as an OutOfRange error (the default for a single fitted vector);
// otherwise such values are kept, as in the per-draw estimator sums, and
// counted in diagnostics["n_pib_geq1"].
PseudoInclusion papw(const CombinedSample& sample, const Matrix& p_b);
PseudoInclusion papw(const CombinedSample& sample, const Matrix& p_b, bool strict);
PseudoInclusion papw(const CombinedSample& sample, const GlmFit& z_fit, const Matrix& X_star_b);

// pi^B_i = E-hat(pi^R | x_i) * p_i / (1 - p_i); the reference inclusion
// probability is predicted rather than known. Draw m of pir pairs with draw m
// of p.
PseudoInclusion papp(const CombinedSample& sample, const Matrix& pir_hat_b, const Matrix& p_b);
PseudoInclusion papp(const CombinedSample& sample, const Matrix& pir_hat_b, const Matrix& p_b,
                     bool strict);

double hajek_mean(const Vector& y, const Vector& weights);

// Hajek mean of y over S_B weighted by 1 / pi(x; beta-hat from solve_pmle).
double ipsw_mean(const CombinedSample& sample, const GlmFit& pmle_fit, CovariateSet covariates);

}  // namespace npfuse
