#include "npfuse/variance.hpp"

#include <cmath>
#include <map>

#include "npfuse/mathx.hpp"
#include "npfuse/parallel.hpp"
#include "npfuse/rng.hpp"

namespace npfuse {

VarianceReport sandwich_papw(const CombinedSample& sample, const Vector& pib,
                             const Vector& p_all, const Matrix& X_star_all, double ybar_papw) {
  const Eigen::Index n = sample.size();
  require(pib.size() == sample.n_b, Err::LengthMismatch, "pib length != n_B");
  require(p_all.size() == n && X_star_all.rows() == n, Err::LengthMismatch,
          "p / design rows != sample size");

  const double n_pop = sample.population_size
                           ? *sample.population_size
                           : (1.0 / pib.array()).sum();
  const Eigen::Index d = X_star_all.cols();

  // Middle matrix: the combined-sample estimate of (1/N) sum_U pi^R p x x^T,
  // whose design-weighted form is sum_S p(1-p) x x^T. It doubles as the
  // membership-score Jacobian behind b-hat.
  Matrix info = Matrix::Zero(d, d);
  for (Eigen::Index i = 0; i < n; ++i)
    info += p_all[i] * (1.0 - p_all[i]) * X_star_all.row(i).transpose() * X_star_all.row(i);
  info /= n_pop;

  Vector cross = Vector::Zero(d);   // (1/N) sum_B ((y-ybar)/pib) x*
  Vector cross2 = Vector::Zero(d);  // sum_B (1-p) ((y-ybar)/pib) x*
  double term1 = 0.0;
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = sample.records[static_cast<std::size_t>(i)];
    if (r.z != 1) continue;
    const double resid = (*r.y - ybar_papw) / pib[k];
    term1 += (1.0 - pib[k]) * resid * resid;
    cross += resid * X_star_all.row(i).transpose() / n_pop;
    cross2 += (1.0 - p_all[i]) * resid * X_star_all.row(i).transpose();
    ++k;
  }
  term1 /= n_pop * n_pop;

  Eigen::FullPivLU<Matrix> lu(info);
  if (!lu.isInvertible()) fail(Err::SingularMatrix, "sum p x* x*^T is singular");
  const Vector b = lu.solve(cross);

  const double term2 = -2.0 * b.dot(cross2) / (n_pop * n_pop);
  const double term3 = b.dot(info * b) / n_pop;

  VarianceReport rep;
  rep.estimator = "sandwich-papw";
  rep.components["term1"] = term1;
  rep.components["term2"] = term2;
  rep.components["term3"] = term3;
  rep.components["assembled"] = term1 + term2 + term3;
  rep.components["b_norm"] = b.norm();
  rep.flagged_negative = rep.components["assembled"] < 0.0;
  rep.variance = std::max(0.0, rep.components["assembled"]);
  return rep;
}

VarianceReport chen_dr_variance(const CombinedSample& sample, const Vector& pib,
                                const Vector& m_hat_all, const Vector& sigma2_all) {
  const Eigen::Index n = sample.size();
  require(pib.size() == sample.n_b, Err::LengthMismatch, "pib length != n_B");
  require(m_hat_all.size() == n && sigma2_all.size() == n, Err::LengthMismatch,
          "m_hat / sigma2 length != sample size");

  double nb_hat = (1.0 / pib.array()).sum();
  double nr_hat = 0.0;
  for (const auto& r : sample.records)
    if (r.z == 0) nr_hat += 1.0 / *r.pi_r;
  const double n_b2 = sample.population_size ? *sample.population_size * *sample.population_size
                                             : nb_hat * nb_hat;
  const double n_r2 = sample.population_size ? *sample.population_size * *sample.population_size
                                             : nr_hat * nr_hat;

  // V1: design variance of the PM Hajek mean under Poisson sampling of S_R.
  double t_r = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = sample.records[static_cast<std::size_t>(i)];
    if (r.z == 0) t_r += m_hat_all[i] / *r.pi_r;
  }
  const double ybar_pm = t_r / nr_hat;
  double v1 = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = sample.records[static_cast<std::size_t>(i)];
    if (r.z != 0) continue;
    const double pir = *r.pi_r;
    const double dev = m_hat_all[i] - ybar_pm;
    v1 += (1.0 - pir) * dev * dev / (pir * pir);
  }
  v1 /= n_r2;

  double v2 = 0.0, bias = 0.0;
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = sample.records[static_cast<std::size_t>(i)];
    if (r.z == 1) {
      const double resid = *r.y - m_hat_all[i];
      v2 += (1.0 - pib[k]) / (pib[k] * pib[k]) * resid * resid;
      bias += sigma2_all[i] / pib[k] / n_b2;
      ++k;
    } else {
      bias -= sigma2_all[i] / *r.pi_r / n_r2;
    }
  }
  v2 /= n_b2;

  VarianceReport rep;
  rep.estimator = "chen-dr";
  rep.components["V1"] = v1;
  rep.components["V2"] = v2;
  rep.components["B_V2"] = bias;
  rep.components["assembled"] = v1 + v2 - bias;
  rep.flagged_negative = rep.components["assembled"] < 0.0;
  rep.variance = std::max(0.0, rep.components["assembled"]);
  return rep;
}

namespace {

struct PsuGroup {
  std::vector<std::size_t> members;  // record indices into sample.records
};

std::vector<PsuGroup> psu_groups(const CombinedSample& sample, int z, bool cluster_aware) {
  std::vector<PsuGroup> groups;
  std::map<std::string, std::size_t> by_cluster;
  for (std::size_t i = 0; i < sample.records.size(); ++i) {
    const auto& r = sample.records[i];
    if (r.z != z) continue;
    if (cluster_aware && r.cluster_id) {
      auto [it, inserted] = by_cluster.try_emplace(*r.cluster_id, groups.size());
      if (inserted) groups.emplace_back();
      groups[it->second].members.push_back(i);
    } else {
      groups.emplace_back();
      groups.back().members.push_back(i);
    }
  }
  return groups;
}

}  // namespace

CombinedSample rao_wu_replicate(const CombinedSample& sample, std::uint64_t seed, Eigen::Index b,
                                bool cluster_aware) {
  const auto psu_r = psu_groups(sample, 0, cluster_aware);
  const auto psu_b = psu_groups(sample, 1, cluster_aware);
  const std::size_t nr = psu_r.size(), nb = psu_b.size();
  require(nr >= 2 && nb >= 2, Err::ConfigInvalid, "each sample needs at least 2 PSUs");

  Rng rng = Rng::derive(seed, 0xb007ULL * 0x100000000ULL + static_cast<std::uint64_t>(b));
  std::vector<int> h_r(nr, 0), h_b(nb, 0);
  for (std::size_t i = 0; i + 1 < nr; ++i) ++h_r[rng.uniform_int(nr)];
  for (std::size_t i = 0; i + 1 < nb; ++i) ++h_b[rng.uniform_int(nb)];

  std::vector<UnitRecord> rep_r, rep_b;
  const double scale_r = static_cast<double>(nr) / static_cast<double>(nr - 1);
  for (std::size_t g = 0; g < nr; ++g) {
    if (h_r[g] == 0) continue;
    for (std::size_t idx : psu_r[g].members) {
      UnitRecord r = sample.records[idx];
      // w' = w * (n/(n-1)) * h  =>  pi' = pi / ((n/(n-1)) * h)
      r.pi_r = *r.pi_r / (scale_r * static_cast<double>(h_r[g]));
      rep_r.push_back(std::move(r));
    }
  }
  for (std::size_t g = 0; g < nb; ++g) {
    for (int c = 0; c < h_b[g]; ++c) {
      for (std::size_t idx : psu_b[g].members) {
        UnitRecord r = sample.records[idx];
        if (c > 0) {
          r.id += "#" + std::to_string(c);
          if (r.cluster_id) *r.cluster_id += "#" + std::to_string(c);
        }
        rep_b.push_back(std::move(r));
      }
    }
  }
  return build_combined(rep_r, rep_b, sample.population_size, sample.outcome);
}

VarianceReport rao_wu_bootstrap(const CombinedSample& sample, const PointEstimator& estimator,
                                Eigen::Index B, std::uint64_t seed, bool cluster_aware,
                                int jobs) {
  require(B >= 2, Err::ConfigInvalid, "bootstrap needs B >= 2");
  {
    const auto psu_r = psu_groups(sample, 0, cluster_aware);
    const auto psu_b = psu_groups(sample, 1, cluster_aware);
    require(psu_r.size() >= 2 && psu_b.size() >= 2, Err::ConfigInvalid,
            "each sample needs at least 2 PSUs");
  }

  std::vector<double> points(static_cast<std::size_t>(B));
  std::vector<char> ok(static_cast<std::size_t>(B), 0);
  std::vector<std::string> first_error(static_cast<std::size_t>(B));

  parallel_for(static_cast<std::size_t>(B), jobs, [&](std::size_t b) {
    try {
      const CombinedSample replicate =
          rao_wu_replicate(sample, seed, static_cast<Eigen::Index>(b), cluster_aware);
      points[b] = estimator(replicate);
      require(std::isfinite(points[b]), Err::EstimatorFailed, "non-finite replicate point");
      ok[b] = 1;
    } catch (const Error& e) {
      first_error[b] = e.what();
    }
  });

  Eigen::Index n_ok = 0;
  double sum = 0.0;
  for (std::size_t b = 0; b < points.size(); ++b)
    if (ok[b]) {
      ++n_ok;
      sum += points[b];
    }
  const Eigen::Index failures = B - n_ok;
  if (static_cast<double>(failures) > 0.05 * static_cast<double>(B)) {
    std::string detail;
    for (std::size_t b = 0; b < points.size(); ++b)
      if (!ok[b]) {
        detail = first_error[b];
        break;
      }
    fail(Err::EstimatorFailed, std::to_string(failures) + "/" + std::to_string(B) +
                                   " bootstrap replicates failed; first: " + detail);
  }

  const double mean_pt = sum / static_cast<double>(n_ok);
  double var = 0.0;
  for (std::size_t b = 0; b < points.size(); ++b)
    if (ok[b]) var += (points[b] - mean_pt) * (points[b] - mean_pt);
  var /= static_cast<double>(n_ok);

  VarianceReport rep;
  rep.estimator = "rao-wu-bootstrap";
  rep.variance = var;
  rep.components["B_effective"] = static_cast<double>(n_ok);
  rep.components["failures"] = static_cast<double>(failures);
  rep.components["boot_mean"] = mean_pt;
  return rep;
}

VarianceReport rubin_combine(const Vector& per_draw_points, const Vector& within_variances) {
  require(per_draw_points.size() == within_variances.size(), Err::LengthMismatch,
          "points and within variances differ in length");
  const Eigen::Index m = per_draw_points.size();
  if (m < 2) fail(Err::TooFewDraws, "Rubin combination needs M >= 2");
  const double within = within_variances.mean();
  const double between = sample_variance(per_draw_points);
  VarianceReport rep;
  rep.estimator = "rubin";
  rep.components["within"] = within;
  rep.components["between"] = between;
  rep.variance = within + (1.0 + 1.0 / static_cast<double>(m)) * between;
  return rep;
}

namespace {

// Collapses per-unit values to per-cluster totals; records without a cluster
// id stay singleton clusters.
void cluster_totals(const std::vector<const UnitRecord*>& rows, const Vector& values,
                    const Vector& probs, Vector& out_values, Vector& out_probs) {
  std::map<std::string, std::pair<double, double>> totals;
  std::vector<std::string> order;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::string key = rows[i]->cluster_id ? *rows[i]->cluster_id : "#u#" + rows[i]->id;
    auto [it, inserted] = totals.try_emplace(key, std::pair<double, double>{0.0, 0.0});
    if (inserted) order.push_back(key);
    it->second.first += values[static_cast<Eigen::Index>(i)];
    it->second.second += probs[static_cast<Eigen::Index>(i)];
  }
  out_values = Vector(static_cast<Eigen::Index>(order.size()));
  out_probs = Vector(static_cast<Eigen::Index>(order.size()));
  for (std::size_t g = 0; g < order.size(); ++g) {
    out_values[static_cast<Eigen::Index>(g)] = totals[order[g]].first;
    out_probs[static_cast<Eigen::Index>(g)] = totals[order[g]].second;
  }
}

double variance_or_zero(const Vector& v) {
  if (v.size() < 2) return 0.0;
  return sample_variance(v);
}

}  // namespace

WithinVarianceParts within_variance_parts(const CombinedSample& sample, const Vector& yhat_r,
                                          const Vector& pib_b, bool by_cluster) {
  require(yhat_r.size() == sample.n_r, Err::LengthMismatch, "yhat_r length != n_R");
  require(pib_b.size() == sample.n_b, Err::LengthMismatch, "pib_b length != n_B");

  std::vector<const UnitRecord*> rows_b, rows_r;
  for (const auto& r : sample.records) (r.z == 1 ? rows_b : rows_r).push_back(&r);

  Vector yb(sample.n_b), pir(sample.n_r);
  for (Eigen::Index i = 0; i < sample.n_b; ++i) yb[i] = *rows_b[static_cast<std::size_t>(i)]->y;
  for (Eigen::Index j = 0; j < sample.n_r; ++j) pir[j] = *rows_r[static_cast<std::size_t>(j)]->pi_r;

  Vector yb_eff = yb, pib_eff = pib_b, yhat_eff = yhat_r, pir_eff = pir;
  if (by_cluster) {
    cluster_totals(rows_b, yb, pib_b, yb_eff, pib_eff);
    cluster_totals(rows_r, yhat_r, pir, yhat_eff, pir_eff);
  }

  WithinVarianceParts parts;

  const double var_y = variance_or_zero(yb_eff);
  double nb_hat = 0.0, s_invpib2 = 0.0;
  for (Eigen::Index i = 0; i < pib_eff.size(); ++i) {
    nb_hat += 1.0 / pib_eff[i];
    s_invpib2 += 1.0 / (pib_eff[i] * pib_eff[i]);
  }
  parts.sb_term = var_y * s_invpib2 / (nb_hat * nb_hat);

  Vector inv_wr(pir_eff.size());
  for (Eigen::Index j = 0; j < pir_eff.size(); ++j) inv_wr[j] = 1.0 / pir_eff[j];
  const double var_w = variance_or_zero(inv_wr);
  if (var_w > 0.0) {
    const double nr_hat = inv_wr.sum();
    const double t_r = (yhat_eff.array() * inv_wr.array()).sum();
    const double ratio = t_r / nr_hat;
    const double n_r = static_cast<double>(yhat_eff.size());
    const double bracket =
        yhat_eff.squaredNorm() + n_r * ratio * ratio - 2.0 * ratio * yhat_eff.sum();
    parts.sr_term = var_w * bracket / (nr_hat * nr_hat);
  }
  return parts;
}

double within_variance_approx(const CombinedSample& sample, const Vector& yhat_r,
                              const Vector& pib_b, bool by_cluster) {
  return within_variance_parts(sample, yhat_r, pib_b, by_cluster).total();
}

}  // namespace npfuse
