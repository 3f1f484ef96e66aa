#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>

#include "npfuse/data_model.hpp"

namespace npfuse {

struct VarianceReport {
  std::string estimator;
  double variance = 0.0;  // nonnegative; raw assembled value in components
  std::map<std::string, double> components;
  bool flagged_negative = false;
};

// Sandwich variance of the PAPW pseudo-weighted mean with known pi^R.
// p_all holds the fitted membership probabilities on every record and
// X_star_all the membership-model design, both in record order.
VarianceReport sandwich_papw(const CombinedSample& sample, const Vector& pib,
                             const Vector& p_all, const Matrix& X_star_all, double ybar_papw);

// DR asymptotic variance V1 + V2 - B(V2). m_hat_all are outcome-model means
// in record order; sigma2_all the conditional outcome variances Var(y|x).
VarianceReport chen_dr_variance(const CombinedSample& sample, const Vector& pib,
                                const Vector& m_hat_all, const Vector& sigma2_all);

using PointEstimator = std::function<double(const CombinedSample&)>;

// Builds bootstrap replicate b deterministically from (seed, b): n-1 PSU
// draws with replacement per sample, reference weights rescaled by
// (n/(n-1)) * h, non-probability PSUs duplicated h times.
CombinedSample rao_wu_replicate(const CombinedSample& sample, std::uint64_t seed, Eigen::Index b,
                                bool cluster_aware);

// With-replacement rescaling bootstrap: n-1 draws per sample (PSU draws when
// cluster_aware), reference weights rescaled by (n/(n-1)) * h_i. Replicate b
// uses the RNG stream derived from (seed, b), so any parallel order gives
// identical results.
VarianceReport rao_wu_bootstrap(const CombinedSample& sample, const PointEstimator& estimator,
                                Eigen::Index B, std::uint64_t seed, bool cluster_aware,
                                int jobs = 1);

// Multiple-imputation combination: mean within + (1 + 1/M) * between.
VarianceReport rubin_combine(const Vector& per_draw_points, const Vector& within_variances);

struct WithinVarianceParts {
  double sb_term = 0.0;  // residual part over S_B
  double sr_term = 0.0;  // ratio-estimator part over S_R
  double total() const { return sb_term + sr_term; }
};

// Approximate within-imputation variance of one DR draw. yhat_r follows the
// S_R record order, pib_b the S_B order. With by_cluster, y / yhat / pi
// values are replaced by cluster totals and counts by cluster counts.
WithinVarianceParts within_variance_parts(const CombinedSample& sample, const Vector& yhat_r,
                                          const Vector& pib_b, bool by_cluster = false);

double within_variance_approx(const CombinedSample& sample, const Vector& yhat_r,
                              const Vector& pib_b, bool by_cluster = false);

}  // namespace npfuse
