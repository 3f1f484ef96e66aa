#include "npfuse/estimators.hpp"

#include <cmath>

#include "npfuse/mathx.hpp"

namespace npfuse {

EstimateReport pm_estimate(const CombinedSample& sample, const Vector& yhat_r) {
  require(yhat_r.size() == sample.n_r, Err::LengthMismatch, "yhat_r length != n_R");
  const Vector pir = sample.pi_r_r();
  Vector w(pir.size());
  for (Eigen::Index i = 0; i < pir.size(); ++i) w[i] = 1.0 / pir[i];
  EstimateReport rep;
  rep.method = "PM";
  rep.point = hajek_mean(yhat_r, w);
  rep.finalize_ci();
  return rep;
}

EstimateReport aipw_plugin(const CombinedSample& sample, const Vector& pib, const Vector& m_hat_b,
                           const Vector& m_hat_r, Normalization normalization) {
  require(pib.size() == sample.n_b, Err::LengthMismatch, "pib length != n_B");
  require(m_hat_b.size() == sample.n_b, Err::LengthMismatch, "m_hat_b length != n_B");
  require(m_hat_r.size() == sample.n_r, Err::LengthMismatch, "m_hat_r length != n_R");

  const Vector yb = sample.y_b();
  const Vector pir = sample.pi_r_r();

  double sum_b = 0.0, nb_hat = 0.0;
  for (Eigen::Index i = 0; i < sample.n_b; ++i) {
    sum_b += (yb[i] - m_hat_b[i]) / pib[i];
    nb_hat += 1.0 / pib[i];
  }
  double sum_r = 0.0, nr_hat = 0.0;
  for (Eigen::Index j = 0; j < sample.n_r; ++j) {
    sum_r += m_hat_r[j] / pir[j];
    nr_hat += 1.0 / pir[j];
  }

  EstimateReport rep;
  rep.method = "AIPW";
  if (normalization == Normalization::KnownN) {
    require(sample.population_size.has_value(), Err::MissingN,
            "KnownN normalization needs population_size");
    const double n = *sample.population_size;
    rep.point = sum_b / n + sum_r / n;
    rep.diagnostics["normalization"] = 0.0;
  } else {
    rep.point = sum_b / nb_hat + sum_r / nr_hat;
    rep.diagnostics["normalization"] = 1.0;
  }
  rep.diagnostics["nb_hat"] = nb_hat;
  rep.diagnostics["nr_hat"] = nr_hat;
  rep.finalize_ci();
  return rep;
}

namespace {

// U_theta(beta) = sum_S (1/pi^R) [Z/p - 1] x_pm ; only beta enters.
Vector joint_u_beta(const Vector& beta, const Matrix& X_qr, const Matrix& X_pm,
                    const Vector& inv_pir, const Vector& z) {
  const Vector eta = X_qr * beta;
  Vector u = Vector::Zero(X_pm.cols());
  for (Eigen::Index i = 0; i < X_qr.rows(); ++i) {
    const double p = inv_logit(eta[i]);
    u += inv_pir[i] * (z[i] / p - 1.0) * X_pm.row(i).transpose();
  }
  return u;
}

}  // namespace

JointAipwResult aipw_joint(const CombinedSample& sample, const Matrix& X_qr, const Matrix& X_pm,
                           Normalization normalization, const GlmControl& control) {
  require(X_qr.cols() == X_pm.cols(), Err::DimensionMismatch,
          "QR and PM covariate dimensions differ (" + std::to_string(X_qr.cols()) + " vs " +
              std::to_string(X_pm.cols()) + ")");
  const Eigen::Index n = sample.size();
  require(X_qr.rows() == n && X_pm.rows() == n, Err::LengthMismatch,
          "design rows != sample size");

  Vector inv_pir(n), z(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = sample.records[static_cast<std::size_t>(i)];
    require(r.pi_r.has_value(), Err::MissingField,
            "pi_r required on every record for the joint DR solve (row id=" + r.id + ")");
    inv_pir[i] = 1.0 / *r.pi_r;
    z[i] = static_cast<double>(r.z);
  }

  // Stage 1: Newton for beta, started at the plain membership MLE.
  Vector beta;
  {
    GlmFit z_mle = fit_logistic(X_qr, z);
    beta = z_mle.coefficients;
  }
  Vector u = joint_u_beta(beta, X_qr, X_pm, inv_pir, z);
  double unorm = u.cwiseAbs().maxCoeff();
  const double tol = control.tol * static_cast<double>(n);
  bool converged = unorm <= tol;
  int iterations = 0;
  for (int iter = 1; iter <= control.max_iter && !converged; ++iter) {
    // dU/dbeta = -sum_B (1/pi^R) ((1-p)/p) x_pm x_qr^T
    Matrix jac = Matrix::Zero(X_pm.cols(), X_qr.cols());
    const Vector eta = X_qr * beta;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (z[i] != 1.0) continue;
      const double p = inv_logit(eta[i]);
      jac -= inv_pir[i] * (1.0 - p) / p * X_pm.row(i).transpose() * X_qr.row(i);
    }
    Eigen::FullPivLU<Matrix> lu(jac);
    if (!lu.isInvertible()) fail(Err::SingularJacobian, "joint DR Jacobian singular");
    Vector step = -lu.solve(u);
    Vector new_u;
    double new_norm;
    int halvings = 0;
    for (;;) {
      new_u = joint_u_beta(beta + step, X_qr, X_pm, inv_pir, z);
      new_norm = new_u.cwiseAbs().maxCoeff();
      if ((std::isfinite(new_norm) && new_norm < unorm) || halvings >= control.max_halvings) break;
      step *= 0.5;
      ++halvings;
    }
    beta += step;
    u = new_u;
    unorm = new_norm;
    iterations = iter;
    converged = unorm <= tol;
  }
  if (!converged)
    fail(Err::NoConvergence, "joint DR beta equations stalled at max|U| = " + std::to_string(unorm));

  // Stage 2: theta solves sum_B w x_qr (y - theta^T x_pm) = 0 with
  // w = (1/pi^R) (1-p)/p, a square cross-moment system.
  const Vector eta = X_qr * beta;
  Vector p_all(n);
  for (Eigen::Index i = 0; i < n; ++i) p_all[i] = inv_logit(eta[i]);

  Matrix cross = Matrix::Zero(X_qr.cols(), X_pm.cols());
  Vector rhs = Vector::Zero(X_qr.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    if (z[i] != 1.0) continue;
    const auto& r = sample.records[static_cast<std::size_t>(i)];
    const double w = inv_pir[i] * (1.0 - p_all[i]) / p_all[i];
    cross += w * X_qr.row(i).transpose() * X_pm.row(i);
    rhs += w * *r.y * X_qr.row(i).transpose();
  }
  Eigen::FullPivLU<Matrix> lu(cross);
  if (!lu.isInvertible()) fail(Err::SingularJacobian, "joint DR theta system singular");
  const Vector theta = lu.solve(rhs);

  const Vector m_hat_all = X_pm * theta;
  Vector pib(sample.n_b), m_hat_b(sample.n_b), m_hat_r(sample.n_r);
  Eigen::Index kb = 0, kr = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (z[i] == 1.0) {
      pib[kb] = (1.0 / inv_pir[i]) * p_all[i] / (1.0 - p_all[i]);
      m_hat_b[kb] = m_hat_all[i];
      ++kb;
    } else {
      m_hat_r[kr++] = m_hat_all[i];
    }
  }

  JointAipwResult out;
  out.report = aipw_plugin(sample, pib, m_hat_b, m_hat_r, normalization);
  out.report.method = "AIPW-joint";
  out.report.diagnostics["beta_resid_maxnorm"] = unorm;
  out.report.diagnostics["iterations"] = static_cast<double>(iterations);
  out.beta = beta;
  out.theta = theta;
  out.p_all = p_all;
  out.m_hat_all = m_hat_all;
  return out;
}

BayesAipwResult aipw_bayes(const CombinedSample& sample, const DrawSet& draws, BayesRoute route) {
  require(draws.M >= 1, Err::TooFewDraws, "DrawSet has no draws");
  require(draws.y_imputed.rows() == draws.M && draws.pib_draws.rows() == draws.M,
          Err::DrawCountMismatch, "DrawSet members disagree on M");
  require(draws.y_imputed.cols() == sample.size(), Err::LengthMismatch,
          "y_imputed columns != sample size");
  require(draws.pib_draws.cols() == sample.n_b, Err::LengthMismatch,
          "pib_draws columns != n_B");
  if (route == BayesRoute::PappUnknownPir) {
    require(draws.pir_pred_draws.has_value(), Err::MissingPirDraws,
            "PAPP route requires pir_pred_draws");
    require(draws.pir_pred_draws->rows() == draws.M, Err::DrawCountMismatch,
            "pir_pred_draws disagree on M");
  }

  const Vector yb = sample.y_b();
  const Vector pir = sample.pi_r_r();
  const auto idx_b = sample.indices_b();
  const auto idx_r = sample.indices_r();

  BayesAipwResult out;
  out.per_draw = Vector(draws.M);
  for (Eigen::Index m = 0; m < draws.M; ++m) {
    double sum_b = 0.0, nb_hat = 0.0;
    for (Eigen::Index i = 0; i < sample.n_b; ++i) {
      const double pib = draws.pib_draws(m, i);
      require(pib > 0.0, Err::OutOfRange, "pib draw must be positive");
      const double yhat = draws.y_imputed(m, idx_b[static_cast<std::size_t>(i)]);
      sum_b += (yb[i] - yhat) / pib;
      nb_hat += 1.0 / pib;
    }
    double sum_r = 0.0, nr_hat = 0.0;
    for (Eigen::Index j = 0; j < sample.n_r; ++j) {
      sum_r += draws.y_imputed(m, idx_r[static_cast<std::size_t>(j)]) / pir[j];
      nr_hat += 1.0 / pir[j];
    }
    out.per_draw[m] = sum_b / nb_hat + sum_r / nr_hat;
  }
  out.point = out.per_draw.mean();
  return out;
}

}  // namespace npfuse
