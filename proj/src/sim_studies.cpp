#include "npfuse/sim_studies.hpp"

#include <algorithm>
#include <cmath>

#include "npfuse/mathx.hpp"
#include "npfuse/rng.hpp"

namespace npfuse {

namespace {

// Solves sum_i inv_logit(c + score_i) = target for c. Monotone in c, so
// Newton with a bisection safeguard always lands.
double calibrate_logistic_intercept(const Vector& score, double target) {
  const double n = static_cast<double>(score.size());
  require(target > 0.0 && target < n, Err::CalibrationFailed,
          "target sum " + std::to_string(target) + " outside attainable range (0, " +
              std::to_string(n) + ")");
  double lo = -60.0, hi = 60.0;
  auto eval = [&](double c) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < score.size(); ++i) s += inv_logit(c + score[i]);
    return s - target;
  };
  while (eval(lo) > 0.0) lo -= 60.0;
  while (eval(hi) < 0.0) hi += 60.0;
  double c = std::log(target / n) - std::log1p(-target / n) - score.mean();
  for (int iter = 0; iter < 100; ++iter) {
    double f = 0.0, fp = 0.0;
    for (Eigen::Index i = 0; i < score.size(); ++i) {
      const double p = inv_logit(c + score[i]);
      f += p;
      fp += p * (1.0 - p);
    }
    f -= target;
    if (std::abs(f) < 1e-7 * std::max(1.0, target)) return c;
    if (f > 0.0)
      hi = c;
    else
      lo = c;
    double next = c - f / fp;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    c = next;
  }
  fail(Err::CalibrationFailed, "intercept calibration did not converge");
}

double fk_eval(Sim2Fk fk, double x) {
  switch (fk) {
    case Sim2Fk::SIN: return std::sin(x);
    case Sim2Fk::EXP: return std::exp(0.5 * x);
    case Sim2Fk::SQR: return x * x / 3.0;
  }
  return 0.0;
}

}  // namespace

PopulationTruth gen_sim1(Eigen::Index N, double rho, std::uint64_t seed, double n_r, double n_b) {
  require(N >= 1000, Err::ConfigInvalid, "sim1 needs N >= 1000");
  require(rho > 0.0 && rho < 1.0, Err::ConfigInvalid, "rho must lie in (0,1)");
  Rng rng = Rng::derive(seed, 0x51A1ULL);

  PopulationTruth pop;
  pop.sim_id = 1;
  pop.rho = rho;
  pop.n_units = N;
  pop.target_n_r = n_r;
  pop.target_n_b = n_b;
  pop.x = Matrix(N, 4);
  pop.d = Matrix(N, 0);

  Vector z3(N), lin(N);
  for (Eigen::Index i = 0; i < N; ++i) {
    const double z1 = rng.bernoulli(0.5) ? 1.0 : 0.0;
    const double z2 = rng.uniform(0.0, 2.0);
    const double e3 = rng.exponential(1.0);
    const double z4 = rng.chisq(4.0);
    const double x1 = z1;
    const double x2 = z2 + 0.3 * z1;
    const double x3 = e3 + 0.2 * (x1 + x2);
    const double x4 = z4 + 0.1 * (x1 + x2 + x3);
    pop.x(i, 0) = x1;
    pop.x(i, 1) = x2;
    pop.x(i, 2) = x3;
    pop.x(i, 3) = x4;
    z3[i] = e3;
    lin[i] = x1 + x2 + x3 + x4;
  }

  // sigma chosen so corr(y, sum x) = rho on the realized population.
  const double sd_lin = sample_sd(lin);
  pop.sigma = sd_lin * std::sqrt(1.0 / (rho * rho) - 1.0);
  pop.y = Vector(N);
  for (Eigen::Index i = 0; i < N; ++i) pop.y[i] = 2.0 + lin[i] + pop.sigma * rng.normal();
  pop.true_mean = pop.y.mean();

  Vector score_b(N);
  for (Eigen::Index i = 0; i < N; ++i)
    score_b[i] = 0.1 * pop.x(i, 0) + 0.2 * pop.x(i, 1) + 0.1 * pop.x(i, 2) + 0.2 * pop.x(i, 3);
  const double gamma0 = calibrate_logistic_intercept(score_b, n_b);
  pop.pi_b = Vector(N);
  for (Eigen::Index i = 0; i < N; ++i) pop.pi_b[i] = inv_logit(gamma0 + score_b[i]);

  // pi^R proportional to gamma1 + z3 with a 50:1 max/min ratio.
  const double z3min = z3.minCoeff(), z3max = z3.maxCoeff();
  const double gamma1 = (z3max - 50.0 * z3min) / 49.0;
  require(gamma1 + z3min > 0.0, Err::CalibrationFailed, "sim1 pi^R range infeasible");
  const double scale = n_r / (gamma1 * static_cast<double>(N) + z3.sum());
  pop.pi_r = Vector(N);
  for (Eigen::Index i = 0; i < N; ++i)
    pop.pi_r[i] = std::clamp(scale * (gamma1 + z3[i]), 1e-8, 1.0 - 1e-8);
  return pop;
}

PopulationTruth gen_sim2(Eigen::Index N, double rho, Sim2Fk fk, std::uint64_t seed, double n_r,
                         double n_b) {
  require(N >= 1000, Err::ConfigInvalid, "sim2 needs N >= 1000");
  require(rho >= 0.0 && rho < 1.0, Err::ConfigInvalid, "rho must lie in [0,1)");
  Rng rng = Rng::derive(seed, 0x51A2ULL);

  PopulationTruth pop;
  pop.sim_id = 2;
  pop.rho = rho;
  pop.scenario = fk_name(fk);
  pop.n_units = N;
  pop.target_n_r = n_r;
  pop.target_n_b = n_b;
  pop.x = Matrix(N, 1);
  pop.d = Matrix(N, 1);

  Vector m(N);
  const double cross = std::sqrt(1.0 - rho * rho);
  for (Eigen::Index i = 0; i < N; ++i) {
    const double dv = rng.normal();
    const double xv = rho * dv + cross * rng.normal();
    pop.d(i, 0) = dv;
    pop.x(i, 0) = xv;
    m[i] = 2.0 * fk_eval(fk, xv) - dv * dv + 0.5 * xv * dv;
  }
  pop.sigma = sample_sd(m) * std::sqrt(1.0 / 0.25 - 1.0);  // outcome correlation 0.5
  // The intercept keeps the population mean away from zero so that relative
  // metrics are on the same scale as the reported study-two tables; the
  // nonlinear mean structure and the correlation target are unaffected.
  pop.y = Vector(N);
  for (Eigen::Index i = 0; i < N; ++i) pop.y[i] = 2.0 + m[i] + pop.sigma * rng.normal();
  pop.true_mean = pop.y.mean();

  Vector score_r(N), score_b(N);
  for (Eigen::Index i = 0; i < N; ++i) {
    score_r[i] = 0.2 * pop.d(i, 0) * pop.d(i, 0);
    score_b[i] = fk_eval(fk, pop.x(i, 0));
  }
  const double g0 = calibrate_logistic_intercept(score_r, n_r);
  const double g1 = calibrate_logistic_intercept(score_b, n_b);
  pop.pi_r = Vector(N);
  pop.pi_b = Vector(N);
  for (Eigen::Index i = 0; i < N; ++i) {
    pop.pi_r[i] = inv_logit(g0 + score_r[i]);
    pop.pi_b[i] = inv_logit(g1 + score_b[i]);
  }
  return pop;
}

PopulationTruth gen_sim3(Eigen::Index A, Eigen::Index n_alpha, double rho, std::uint64_t seed,
                         double n_r_psu, double n_b_psu, Eigen::Index r_per_cluster,
                         Eigen::Index b_per_cluster) {
  require(A >= 10, Err::ConfigInvalid, "sim3 needs A >= 10");
  require(n_alpha >= 2, Err::ConfigInvalid, "sim3 needs n_alpha >= 2");
  require(rho >= 0.0 && rho < 1.0, Err::ConfigInvalid, "rho must lie in [0,1)");
  Rng rng = Rng::derive(seed, 0x51A3ULL);

  Matrix cov(3, 3);
  cov << 1.0, -rho / 2.0, rho,
         -rho / 2.0, 1.0, -rho / 2.0,
         rho, -rho / 2.0, 1.0;
  Eigen::LLT<Matrix> llt(cov);
  require(llt.info() == Eigen::Success, Err::CalibrationFailed,
          "sim3 covariance not positive definite at rho=" + std::to_string(rho));
  const Matrix L = llt.matrixL();

  const Eigen::Index N = A * n_alpha;
  PopulationTruth pop;
  pop.sim_id = 3;
  pop.rho = rho;
  pop.scenario = "clustered";
  pop.n_units = N;
  pop.n_clusters = A;
  pop.r_per_cluster = r_per_cluster;
  pop.b_per_cluster = b_per_cluster;
  pop.target_n_r = n_r_psu * static_cast<double>(r_per_cluster);
  pop.target_n_b = n_b_psu * static_cast<double>(b_per_cluster);

  // Cluster-level covariates (d, x0, x1); x2 = 1{x0 > 0}. ICC 0.2 with unit
  // variance 1 gives var(u) = 0.25.
  Vector d_c(A), x1_c(A), x2_c(A), mu_c(A), eta_b_c(A), score_r(A), score_b(A);
  pop.u_cluster = Vector(A);
  const double sigma_u = std::sqrt(0.2 / (1.0 - 0.2));
  for (Eigen::Index a = 0; a < A; ++a) {
    Vector zraw(3);
    zraw << rng.normal(), rng.normal(), rng.normal();
    Vector v = L * zraw;
    const double dv = v[0];
    const double x0 = v[1];
    const double x1 = 1.0 + v[2];
    const double x2 = x0 > 0.0 ? 1.0 : 0.0;
    d_c[a] = dv;
    x1_c[a] = x1;
    x2_c[a] = x2;
    pop.u_cluster[a] = sigma_u * rng.normal();
    mu_c[a] = 1.0 + 0.5 * x1 * x1 + 0.4 * x1 * x1 * x1 - 0.3 * x2 - 0.2 * x1 * x2 - 0.1 * dv +
              pop.u_cluster[a];
    eta_b_c[a] = -1.0 + 0.1 * x1 * x1 + 0.2 * x1 * x1 * x1 - 0.3 * x2 - 0.4 * x1 * x2 -
                 0.5 * dv + pop.u_cluster[a];
    score_r[a] = 0.5 * dv;
    score_b[a] = -0.1 * x1 + 0.2 * x1 * x1 + 0.3 * x2 - 0.4 * x1 * x2;
  }
  const double g0 = calibrate_logistic_intercept(score_r, n_r_psu);
  const double g1 = calibrate_logistic_intercept(score_b, n_b_psu);
  pop.pi_r_psu = Vector(A);
  pop.pi_b_psu = Vector(A);
  for (Eigen::Index a = 0; a < A; ++a) {
    pop.pi_r_psu[a] = inv_logit(g0 + score_r[a]);
    pop.pi_b_psu[a] = inv_logit(g1 + score_b[a]);
  }

  pop.x = Matrix(N, 2);
  pop.d = Matrix(N, 1);
  pop.y = Vector(N);
  pop.y_bin = Vector(N);
  pop.pi_r = Vector(N);
  pop.pi_b = Vector(N);
  pop.cluster_of.resize(static_cast<std::size_t>(N));
  pop.sigma = 1.0;
  Eigen::Index i = 0;
  for (Eigen::Index a = 0; a < A; ++a) {
    const double p_bin = inv_logit(eta_b_c[a]);
    for (Eigen::Index k = 0; k < n_alpha; ++k, ++i) {
      pop.x(i, 0) = x1_c[a];
      pop.x(i, 1) = x2_c[a];
      pop.d(i, 0) = d_c[a];
      pop.y[i] = mu_c[a] + rng.normal();
      pop.y_bin[i] = rng.bernoulli(p_bin) ? 1.0 : 0.0;
      pop.pi_r[i] = pop.pi_r_psu[a] * static_cast<double>(r_per_cluster) /
                    static_cast<double>(n_alpha);
      pop.pi_b[i] = pop.pi_b_psu[a] * static_cast<double>(b_per_cluster) /
                    static_cast<double>(n_alpha);
      pop.cluster_of[static_cast<std::size_t>(i)] = a;
    }
  }
  pop.true_mean = pop.y.mean();
  pop.true_mean_bin = pop.y_bin.mean();
  return pop;
}

namespace {

UnitRecord make_record(const PopulationTruth& pop, Eigen::Index i, PiField field,
                       bool pir_known_b, bool use_binary) {
  UnitRecord r;
  r.z = field == PiField::B ? 1 : 0;
  r.id = (r.z == 1 ? "b" : "r") + std::to_string(i);
  r.x = pop.x.row(i).transpose();
  if (pop.d.cols() > 0) r.d = pop.d.row(i).transpose();
  if (!pop.cluster_of.empty())
    r.cluster_id = "c" + std::to_string(pop.cluster_of[static_cast<std::size_t>(i)]);
  if (r.z == 1) {
    r.y = use_binary ? pop.y_bin[i] : pop.y[i];
    if (pir_known_b) r.pi_r = pop.pi_r[i];
  } else {
    r.pi_r = pop.pi_r[i];
  }
  return r;
}

}  // namespace

std::vector<UnitRecord> poisson_sample(const PopulationTruth& pop, PiField field,
                                       std::uint64_t seed, bool pir_known_b,
                                       bool use_binary_outcome) {
  Rng rng = Rng::derive(seed, field == PiField::B ? 0xB0ULL : 0xA0ULL);
  const Vector& pi = field == PiField::B ? pop.pi_b : pop.pi_r;
  std::vector<UnitRecord> rows;
  for (Eigen::Index i = 0; i < pop.n_units; ++i) {
    if (rng.uniform() < pi[i])
      rows.push_back(make_record(pop, i, field, pir_known_b, use_binary_outcome));
  }
  return rows;
}

std::vector<UnitRecord> two_stage_cluster_sample(const PopulationTruth& pop, PiField field,
                                                 Eigen::Index per_cluster_n, std::uint64_t seed,
                                                 bool pir_known_b, bool use_binary_outcome) {
  require(pop.n_clusters > 0, Err::ConfigInvalid, "population is not clustered");
  const Eigen::Index n_alpha = pop.n_units / pop.n_clusters;
  require(per_cluster_n >= 1 && per_cluster_n <= n_alpha, Err::ClusterTooSmall,
          "per_cluster_n exceeds cluster size");
  Rng rng = Rng::derive(seed, field == PiField::B ? 0x2B0ULL : 0x2A0ULL);
  const Vector& pi_psu = field == PiField::B ? pop.pi_b_psu : pop.pi_r_psu;

  std::vector<UnitRecord> rows;
  std::vector<Eigen::Index> members(static_cast<std::size_t>(n_alpha));
  for (Eigen::Index a = 0; a < pop.n_clusters; ++a) {
    if (rng.uniform() >= pi_psu[a]) continue;
    const Eigen::Index base = a * n_alpha;
    for (Eigen::Index k = 0; k < n_alpha; ++k) members[static_cast<std::size_t>(k)] = base + k;
    // Partial Fisher-Yates for an SRS without replacement.
    for (Eigen::Index k = 0; k < per_cluster_n; ++k) {
      const auto j = k + static_cast<Eigen::Index>(
                             rng.uniform_int(static_cast<std::uint64_t>(n_alpha - k)));
      std::swap(members[static_cast<std::size_t>(k)], members[static_cast<std::size_t>(j)]);
      rows.push_back(make_record(pop, members[static_cast<std::size_t>(k)], field, pir_known_b,
                                 use_binary_outcome));
    }
  }
  return rows;
}

namespace {

Matrix with_intercept(const Matrix& m, bool intercept) {
  if (!intercept) return m;
  Matrix out(m.rows(), m.cols() + 1);
  out.col(0).setOnes();
  out.rightCols(m.cols()) = m;
  return out;
}

}  // namespace

Matrix working_design(int sim_id, ModelRole role, bool true_spec,
                      const std::vector<UnitRecord>& rows, Sim2Fk fk, bool intercept) {
  const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
  Matrix f;
  if (sim_id == 1) {
    // True working models use x1..x4; the misspecified ones drop x4.
    const Eigen::Index p = true_spec ? 4 : 3;
    f = Matrix(n, p);
    for (Eigen::Index i = 0; i < n; ++i)
      f.row(i) = rows[static_cast<std::size_t>(i)].x.head(p).transpose();
  } else if (sim_id == 2) {
    for (const auto& r : rows)
      require(r.d.has_value() || role == ModelRole::QrPapp || role == ModelRole::PirModel,
              Err::MissingField, "sim2 design needs d on row id=" + r.id);
    auto xv = [&](Eigen::Index i) { return rows[static_cast<std::size_t>(i)].x[0]; };
    auto dv = [&](Eigen::Index i) { return (*rows[static_cast<std::size_t>(i)].d)[0]; };
    switch (role) {
      case ModelRole::QrPapw:
        f = Matrix(n, 2);
        for (Eigen::Index i = 0; i < n; ++i) {
          if (true_spec)
            f.row(i) << fk_eval(fk, xv(i)), dv(i) * dv(i);
          else
            f.row(i) << xv(i), dv(i);
        }
        break;
      case ModelRole::QrPapp:
        f = Matrix(n, 1);
        for (Eigen::Index i = 0; i < n; ++i)
          f(i, 0) = true_spec ? fk_eval(fk, xv(i)) : xv(i);
        break;
      case ModelRole::PirModel:
        f = Matrix(n, true_spec ? 2 : 1);
        for (Eigen::Index i = 0; i < n; ++i) {
          if (true_spec)
            f.row(i) << xv(i), xv(i) * xv(i);
          else
            f(i, 0) = xv(i);
        }
        break;
      case ModelRole::Pm:
        f = Matrix(n, true_spec ? 3 : 2);
        for (Eigen::Index i = 0; i < n; ++i) {
          if (true_spec)
            f.row(i) << fk_eval(fk, xv(i)), dv(i) * dv(i), xv(i) * dv(i);
          else
            f.row(i) << xv(i), dv(i);
        }
        break;
    }
  } else if (sim_id == 3) {
    auto x1 = [&](Eigen::Index i) { return rows[static_cast<std::size_t>(i)].x[0]; };
    auto x2 = [&](Eigen::Index i) { return rows[static_cast<std::size_t>(i)].x[1]; };
    auto dv = [&](Eigen::Index i) { return (*rows[static_cast<std::size_t>(i)].d)[0]; };
    switch (role) {
      case ModelRole::QrPapw:
        f = Matrix(n, true_spec ? 5 : 3);
        for (Eigen::Index i = 0; i < n; ++i) {
          if (true_spec)
            f.row(i) << x1(i), x1(i) * x1(i), x2(i), x1(i) * x2(i), dv(i);
          else
            f.row(i) << x1(i), x2(i), dv(i);
        }
        break;
      case ModelRole::QrPapp:
        f = Matrix(n, true_spec ? 4 : 2);
        for (Eigen::Index i = 0; i < n; ++i) {
          if (true_spec)
            f.row(i) << x1(i), x1(i) * x1(i), x2(i), x1(i) * x2(i);
          else
            f.row(i) << x1(i), x2(i);
        }
        break;
      case ModelRole::PirModel:
        f = Matrix(n, 2);
        for (Eigen::Index i = 0; i < n; ++i) f.row(i) << x1(i), x2(i);
        break;
      case ModelRole::Pm:
        f = Matrix(n, true_spec ? 5 : 3);
        for (Eigen::Index i = 0; i < n; ++i) {
          if (true_spec)
            f.row(i) << x1(i) * x1(i), x1(i) * x1(i) * x1(i), x2(i), x1(i) * x2(i), dv(i);
          else
            f.row(i) << x1(i), x2(i), dv(i);
        }
        break;
    }
  } else {
    fail(Err::ConfigInvalid, "unknown sim id " + std::to_string(sim_id));
  }
  return with_intercept(f, intercept);
}

Matrix bart_design(ModelRole role, const std::vector<UnitRecord>& rows) {
  CovariateSet set = (role == ModelRole::Pm || role == ModelRole::QrPapw) ? CovariateSet::XStar
                                                                          : CovariateSet::X;
  if (!rows.empty() && !rows.front().d.has_value()) set = CovariateSet::X;
  return design_matrix(rows, set, false);
}

}  // namespace npfuse
