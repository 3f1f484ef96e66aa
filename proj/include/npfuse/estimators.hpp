#pragma once

#include <map>
#include <string>

#include "npfuse/data_model.hpp"
#include "npfuse/glm.hpp"
#include "npfuse/pseudo_weights.hpp"

namespace npfuse {

inline constexpr double kZ975 = 1.959964;

struct EstimateReport {
  std::string method;
  double point = 0.0;
  double se = 0.0;
  std::pair<double, double> ci95{0.0, 0.0};
  Eigen::Index n_draws_or_boot = 0;
  std::map<std::string, double> diagnostics;

  void finalize_ci() {
    ci95 = {point - kZ975 * se, point + kZ975 * se};
  }
};

// Joint posterior draws feeding the two-step Bayesian AIPW. Rows of
// y_imputed align with the full record order of the sample; pib_draws and
// pir_pred_draws align with the S_B record order.
struct DrawSet {
  Eigen::Index M = 0;
  Matrix y_imputed;
  Matrix pib_draws;
  std::optional<Matrix> pir_pred_draws;
};

enum class Normalization { KnownN, Hajek };

enum class BayesRoute { PapwKnownPir, PappUnknownPir };

// Outcome-model estimator: Hajek mean over S_R of the imputed outcomes.
// yhat_r follows the S_R record order. Variance is the variance module's job.
EstimateReport pm_estimate(const CombinedSample& sample, const Vector& yhat_r);

// Plug-in AIPW with a single pseudo-inclusion vector. m_hat_b / m_hat_r are
// the outcome-model predictions on the S_B and S_R rows.
EstimateReport aipw_plugin(const CombinedSample& sample, const Vector& pib, const Vector& m_hat_b,
                           const Vector& m_hat_r, Normalization normalization);

struct JointAipwResult {
  EstimateReport report;
  Vector beta;     // membership-model coefficients at the root
  Vector theta;    // outcome-model coefficients at the root
  Vector p_all;    // fitted P(Z=1|x) on all records
  Vector m_hat_all;  // fitted outcome means on all records
};

// Simultaneously solved DR estimator: the stacked estimating equations in
// (beta, theta) are triangular, so beta is found by damped Newton and theta
// by the induced cross-moment linear solve. Requires pi_r on every record.
JointAipwResult aipw_joint(const CombinedSample& sample, const Matrix& X_qr, const Matrix& X_pm,
                           Normalization normalization = Normalization::Hajek,
                           const GlmControl& control = {});

struct BayesAipwResult {
  Vector per_draw;  // one DR point per posterior draw, Hajek-normalized
  double point = 0.0;  // Rubin point estimate: mean of per_draw
};

BayesAipwResult aipw_bayes(const CombinedSample& sample, const DrawSet& draws, BayesRoute route);

}  // namespace npfuse
