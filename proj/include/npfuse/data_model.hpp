#pragma once

#include <optional>
#include <string>
#include <vector>

#include "npfuse/common.hpp"

namespace npfuse {

// One sampled unit from either sample. z = 1 marks the non-probability
// sample (S_B), z = 0 the probability reference sample (S_R).
struct UnitRecord {
  std::string id;
  std::optional<std::string> cluster_id;
  Vector x;                        // analysis covariates
  std::optional<Vector> d;         // design covariates of the reference survey
  std::optional<double> y;         // outcome; required on z=1 rows
  std::optional<double> pi_r;      // reference-sample inclusion probability
  int z = 0;
};

enum class OutcomeKind { Continuous, Binary };

// Canonical concatenation x* = [intercept?, x columns, d columns].
struct XStarLayout {
  Eigen::Index p = 0;  // columns of x
  Eigen::Index q = 0;  // columns of d (0 when no record carries d)
};

struct CombinedSample {
  std::vector<UnitRecord> records;   // all z=1 rows first, then z=0 rows
  Eigen::Index n_b = 0;
  Eigen::Index n_r = 0;
  std::optional<double> population_size;
  XStarLayout x_star_layout;
  OutcomeKind outcome = OutcomeKind::Continuous;

  Eigen::Index size() const { return static_cast<Eigen::Index>(records.size()); }

  std::vector<Eigen::Index> indices_b() const;
  std::vector<Eigen::Index> indices_r() const;

  // y over S_B in record order.
  Vector y_b() const;
  // pi_r over S_R in record order.
  Vector pi_r_r() const;
  // pi_r over S_B in record order (errors if any is absent).
  Vector pi_r_b() const;
  // 0/1 membership vector over all records.
  Vector z_vector() const;
};

enum class CovariateSet { X, D, XStar };

CombinedSample build_combined(const std::vector<UnitRecord>& reference_rows,
                              const std::vector<UnitRecord>& nonprob_rows,
                              std::optional<double> population_size = std::nullopt,
                              OutcomeKind outcome = OutcomeKind::Continuous);

// Row order matches record order; intercept column of ones is prepended
// when requested.
Matrix design_matrix(const CombinedSample& sample, CovariateSet which, bool intercept);

Matrix design_matrix(const std::vector<UnitRecord>& rows, CovariateSet which, bool intercept);

struct GroupOverlap {
  double min = 0, q25 = 0, median = 0, q75 = 0, max = 0;
  Eigen::Index n = 0;
  Eigen::Index below_floor = 0;
};

struct PositivityReport {
  GroupOverlap group_b;  // z = 1
  GroupOverlap group_r;  // z = 0
  double floor = 1e-4;
};

PositivityReport positivity_report(const CombinedSample& sample, const Vector& propensities,
                                   double floor = 1e-4);

}  // namespace npfuse
