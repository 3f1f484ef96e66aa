#include "npfuse/data_model.hpp"

#include <unordered_set>

#include "npfuse/mathx.hpp"

namespace npfuse {

std::vector<Eigen::Index> CombinedSample::indices_b() const {
  std::vector<Eigen::Index> out;
  out.reserve(static_cast<std::size_t>(n_b));
  for (Eigen::Index i = 0; i < size(); ++i)
    if (records[static_cast<std::size_t>(i)].z == 1) out.push_back(i);
  return out;
}

std::vector<Eigen::Index> CombinedSample::indices_r() const {
  std::vector<Eigen::Index> out;
  out.reserve(static_cast<std::size_t>(n_r));
  for (Eigen::Index i = 0; i < size(); ++i)
    if (records[static_cast<std::size_t>(i)].z == 0) out.push_back(i);
  return out;
}

Vector CombinedSample::y_b() const {
  Vector out(n_b);
  Eigen::Index k = 0;
  for (const auto& r : records)
    if (r.z == 1) out[k++] = *r.y;
  return out;
}

Vector CombinedSample::pi_r_r() const {
  Vector out(n_r);
  Eigen::Index k = 0;
  for (const auto& r : records)
    if (r.z == 0) out[k++] = *r.pi_r;
  return out;
}

Vector CombinedSample::pi_r_b() const {
  Vector out(n_b);
  Eigen::Index k = 0;
  for (const auto& r : records)
    if (r.z == 1) {
      require(r.pi_r.has_value(), Err::MissingField, "pi_r absent on S_B row id=" + r.id);
      out[k++] = *r.pi_r;
    }
  return out;
}

Vector CombinedSample::z_vector() const {
  Vector out(size());
  for (Eigen::Index i = 0; i < size(); ++i)
    out[i] = static_cast<double>(records[static_cast<std::size_t>(i)].z);
  return out;
}

namespace {

void validate_row(const UnitRecord& r, bool nonprob) {
  if (nonprob) {
    require(r.z == 1, Err::MissingField, "nonprob row id=" + r.id + " must have z=1");
    require(r.y.has_value(), Err::MissingField, "y missing on nonprob row id=" + r.id);
  } else {
    require(r.z == 0, Err::MissingField, "reference row id=" + r.id + " must have z=0");
    require(r.pi_r.has_value(), Err::MissingField, "pi_r missing on reference row id=" + r.id);
  }
  if (r.pi_r) {
    require(*r.pi_r > 0.0 && *r.pi_r <= 1.0, Err::MissingField,
            "pi_r out of (0,1] on row id=" + r.id);
  }
}

}  // namespace

CombinedSample build_combined(const std::vector<UnitRecord>& reference_rows,
                              const std::vector<UnitRecord>& nonprob_rows,
                              std::optional<double> population_size, OutcomeKind outcome) {
  require(!reference_rows.empty(), Err::EmptySample, "reference sample is empty");
  require(!nonprob_rows.empty(), Err::EmptySample, "non-probability sample is empty");

  CombinedSample s;
  s.population_size = population_size;
  s.outcome = outcome;
  s.records.reserve(reference_rows.size() + nonprob_rows.size());

  std::unordered_set<std::string> ids;
  ids.reserve(reference_rows.size() + nonprob_rows.size());
  auto add = [&](const UnitRecord& r, bool nonprob) {
    validate_row(r, nonprob);
    if (!ids.insert(r.id).second) fail(Err::DuplicateId, "id '" + r.id + "' appears twice");
    s.records.push_back(r);
  };
  for (const auto& r : nonprob_rows) add(r, true);
  for (const auto& r : reference_rows) add(r, false);

  s.n_b = static_cast<Eigen::Index>(nonprob_rows.size());
  s.n_r = static_cast<Eigen::Index>(reference_rows.size());

  const Eigen::Index p = s.records.front().x.size();
  Eigen::Index q = 0;
  bool any_d = false, all_d = true;
  for (const auto& r : s.records) {
    require(r.x.size() == p, Err::DimensionMismatch,
            "x length differs on row id=" + r.id);
    if (r.d) {
      if (!any_d) q = r.d->size();
      any_d = true;
      require(r.d->size() == q, Err::DimensionMismatch, "d length differs on row id=" + r.id);
    } else {
      all_d = false;
    }
  }
  s.x_star_layout.p = p;
  s.x_star_layout.q = (any_d && all_d) ? q : 0;
  require(!any_d || all_d, Err::MissingField, "d present on some rows but not all");
  return s;
}

Matrix design_matrix(const std::vector<UnitRecord>& rows, CovariateSet which, bool intercept) {
  require(!rows.empty(), Err::EmptySample, "design_matrix on empty row set");
  const Eigen::Index p = rows.front().x.size();
  Eigen::Index q = 0;
  if (which == CovariateSet::D || which == CovariateSet::XStar) {
    require(rows.front().d.has_value(), Err::MissingField,
            "d missing on row id=" + rows.front().id);
    q = rows.front().d->size();
  }
  Eigen::Index cols = 0;
  switch (which) {
    case CovariateSet::X: cols = p; break;
    case CovariateSet::D: cols = q; break;
    case CovariateSet::XStar: cols = p + q; break;
  }
  const Eigen::Index icol = intercept ? 1 : 0;
  Matrix out(static_cast<Eigen::Index>(rows.size()), cols + icol);
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    require(r.x.size() == p, Err::DimensionMismatch, "x length differs on row id=" + r.id);
    Eigen::Index j = 0;
    if (intercept) out(i, j++) = 1.0;
    if (which == CovariateSet::X || which == CovariateSet::XStar) {
      out.block(i, j, 1, p) = r.x.transpose();
      j += p;
    }
    if (which == CovariateSet::D || which == CovariateSet::XStar) {
      require(r.d.has_value(), Err::MissingField, "d missing on row id=" + r.id);
      require(r.d->size() == q, Err::DimensionMismatch, "d length differs on row id=" + r.id);
      out.block(i, j, 1, q) = r.d->transpose();
    }
  }
  return out;
}

Matrix design_matrix(const CombinedSample& sample, CovariateSet which, bool intercept) {
  return design_matrix(sample.records, which, intercept);
}

namespace {

GroupOverlap summarize(const std::vector<double>& p, double floor) {
  GroupOverlap g;
  g.n = static_cast<Eigen::Index>(p.size());
  if (p.empty()) return g;
  g.min = quantile(p, 0.0);
  g.q25 = quantile(p, 0.25);
  g.median = quantile(p, 0.5);
  g.q75 = quantile(p, 0.75);
  g.max = quantile(p, 1.0);
  for (double v : p)
    if (v < floor) ++g.below_floor;
  return g;
}

}  // namespace

PositivityReport positivity_report(const CombinedSample& sample, const Vector& propensities,
                                   double floor) {
  require(propensities.size() == sample.size(), Err::LengthMismatch,
          "propensity vector length != sample size");
  std::vector<double> pb, pr;
  for (Eigen::Index i = 0; i < sample.size(); ++i) {
    const double v = propensities[i];
    require(v > 0.0 && v < 1.0, Err::OutOfRange, "propensity outside (0,1)");
    (sample.records[static_cast<std::size_t>(i)].z == 1 ? pb : pr).push_back(v);
  }
  PositivityReport rep;
  rep.floor = floor;
  rep.group_b = summarize(pb, floor);
  rep.group_r = summarize(pr, floor);
  return rep;
}

}  // namespace npfuse
