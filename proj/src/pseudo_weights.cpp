#include "npfuse/pseudo_weights.hpp"

#include <cmath>

#include "npfuse/mathx.hpp"

namespace npfuse {

namespace {

struct PmleData {
  Matrix Xb;      // S_B design
  Matrix Xr;      // S_R design
  Vector wr;      // 1 / pi^R over S_R
  Vector target;  // sum of x over S_B
};

PmleData pmle_data(const CombinedSample& sample, CovariateSet covariates) {
  std::vector<UnitRecord> rows_b, rows_r;
  for (const auto& r : sample.records) (r.z == 1 ? rows_b : rows_r).push_back(r);
  PmleData d;
  d.Xb = design_matrix(rows_b, covariates, true);
  d.Xr = design_matrix(rows_r, covariates, true);
  d.wr = Vector(sample.n_r);
  for (Eigen::Index i = 0; i < sample.n_r; ++i) d.wr[i] = 1.0 / *rows_r[static_cast<std::size_t>(i)].pi_r;
  d.target = d.Xb.colwise().sum().transpose();
  return d;
}

Vector pmle_u(const PmleData& d, const Vector& beta) {
  const Vector eta = d.Xr * beta;
  Vector u = d.target;
  for (Eigen::Index i = 0; i < d.Xr.rows(); ++i)
    u -= inv_logit(eta[i]) * d.wr[i] * d.Xr.row(i).transpose();
  return u;
}

}  // namespace

Vector pmle_residual(const CombinedSample& sample, CovariateSet covariates, const Vector& beta) {
  return pmle_u(pmle_data(sample, covariates), beta);
}

GlmFit solve_pmle(const CombinedSample& sample, CovariateSet covariates,
                  const GlmControl& control) {
  const PmleData d = pmle_data(sample, covariates);
  const double n_b = static_cast<double>(sample.n_b);
  // The intercept equation needs sum of 1/pi^R to exceed n_B; otherwise even
  // pi == 1 everywhere cannot satisfy it.
  require(d.wr.sum() > n_b, Err::Infeasible,
          "sum of reference weights (" + std::to_string(d.wr.sum()) +
              ") does not exceed n_B; the estimating equation has no root");

  Vector beta = Vector::Zero(d.Xb.cols());
  Vector u = pmle_u(d, beta);
  double unorm = u.cwiseAbs().maxCoeff();
  const double tol = control.tol * n_b;

  GlmFit fit;
  fit.family = Family::Logistic;
  for (int iter = 1; iter <= control.max_iter; ++iter) {
    if (unorm <= tol) {
      fit.converged = true;
      break;
    }
    // Jacobian: -sum_R pi(1-pi) x x^T / pi^R
    Matrix jac = Matrix::Zero(beta.size(), beta.size());
    const Vector eta = d.Xr * beta;
    for (Eigen::Index i = 0; i < d.Xr.rows(); ++i) {
      const double pi = inv_logit(eta[i]);
      jac -= pi * (1.0 - pi) * d.wr[i] * d.Xr.row(i).transpose() * d.Xr.row(i);
    }
    Eigen::FullPivLU<Matrix> lu(jac);
    if (!lu.isInvertible()) fail(Err::SingularJacobian, "PMLE Jacobian is singular");
    Vector step = -lu.solve(u);

    double new_norm = unorm;
    Vector new_u;
    int halvings = 0;
    for (;;) {
      new_u = pmle_u(d, beta + step);
      new_norm = new_u.cwiseAbs().maxCoeff();
      if (new_norm < unorm || halvings >= control.max_halvings) break;
      step *= 0.5;
      ++halvings;
    }
    beta += step;
    u = new_u;
    unorm = new_norm;
    fit.iterations = iter;
  }
  if (unorm <= tol) fit.converged = true;
  if (!fit.converged)
    fail(Err::NoConvergence,
         "PMLE Newton stalled at max|U| = " + std::to_string(unorm));
  fit.coefficients = beta;
  return fit;
}

PseudoInclusion papw(const CombinedSample& sample, const Matrix& p_b) {
  return papw(sample, p_b, p_b.rows() == 1);
}

PseudoInclusion papw(const CombinedSample& sample, const Matrix& p_b, bool strict) {
  require(p_b.cols() == sample.n_b, Err::LengthMismatch, "p columns != n_B");
  const Vector pir = sample.pi_r_b();
  PseudoInclusion out;
  out.method = PwMethod::PAPW;
  out.values = Matrix(p_b.rows(), p_b.cols());
  // A strict fit with pi^B >= 1 contradicts the known pi^R and is an error.
  // The estimator sums themselves divide by pi^R exp(beta^T x*)
  // unconstrained, so non-strict callers keep such values and count them.
  Eigen::Index n_geq1 = 0;
  for (Eigen::Index m = 0; m < p_b.rows(); ++m) {
    for (Eigen::Index i = 0; i < p_b.cols(); ++i) {
      const double p = p_b(m, i);
      require(p > 0.0 && p < 1.0, Err::OutOfRange, "membership probability outside (0,1)");
      const double pib = pir[i] * p / (1.0 - p);
      if (pib >= 1.0) {
        if (strict)
          fail(Err::OutOfRange,
               "pseudo-inclusion probability " + std::to_string(pib) +
                   " outside (0,1); propensity model inconsistent with known pi^R");
        ++n_geq1;
      }
      out.values(m, i) = pib;
    }
  }
  if (n_geq1 > 0) out.diagnostics["n_pib_geq1"] = static_cast<double>(n_geq1);
  return out;
}

PseudoInclusion papw(const CombinedSample& sample, const GlmFit& z_fit, const Matrix& X_star_b) {
  const Vector p = predict(z_fit, X_star_b, PredictScale::Mean);
  return papw(sample, p.transpose());
}

PseudoInclusion papp(const CombinedSample& sample, const Matrix& pir_hat_b, const Matrix& p_b) {
  return papp(sample, pir_hat_b, p_b, p_b.rows() == 1);
}

PseudoInclusion papp(const CombinedSample& sample, const Matrix& pir_hat_b, const Matrix& p_b,
                     bool strict) {
  require(p_b.cols() == sample.n_b && pir_hat_b.cols() == sample.n_b, Err::LengthMismatch,
          "draw columns != n_B");
  require(pir_hat_b.rows() == p_b.rows(), Err::DrawCountMismatch,
          "pi^R draw count != membership draw count");
  PseudoInclusion out;
  out.method = PwMethod::PAPP;
  out.values = Matrix(p_b.rows(), p_b.cols());
  Eigen::Index n_geq1 = 0;
  for (Eigen::Index m = 0; m < p_b.rows(); ++m) {
    for (Eigen::Index i = 0; i < p_b.cols(); ++i) {
      const double p = p_b(m, i);
      const double pir = pir_hat_b(m, i);
      require(p > 0.0 && p < 1.0, Err::OutOfRange, "membership probability outside (0,1)");
      require(pir > 0.0 && pir < 1.0, Err::OutOfRange, "predicted pi^R outside (0,1)");
      const double pib = pir * p / (1.0 - p);
      if (pib >= 1.0) {
        if (strict)
          fail(Err::OutOfRange,
               "pseudo-inclusion probability " + std::to_string(pib) + " outside (0,1)");
        ++n_geq1;
      }
      out.values(m, i) = pib;
    }
  }
  if (n_geq1 > 0) out.diagnostics["n_pib_geq1"] = static_cast<double>(n_geq1);
  return out;
}

double hajek_mean(const Vector& y, const Vector& weights) {
  require(y.size() == weights.size(), Err::LengthMismatch, "y and weights differ in length");
  if (y.size() == 0) fail(Err::ZeroWeightSum, "empty vectors");
  require((weights.array() > 0.0).all(), Err::ZeroWeightSum, "weights must be positive");
  const double wsum = weights.sum();
  require(wsum > 0.0, Err::ZeroWeightSum, "weight sum is zero");
  return weights.dot(y) / wsum;
}

double ipsw_mean(const CombinedSample& sample, const GlmFit& pmle_fit, CovariateSet covariates) {
  require(pmle_fit.converged, Err::NoConvergence, "PMLE fit did not converge");
  std::vector<UnitRecord> rows_b;
  for (const auto& r : sample.records)
    if (r.z == 1) rows_b.push_back(r);
  const Matrix Xb = design_matrix(rows_b, covariates, true);
  const Vector p = predict(pmle_fit, Xb, PredictScale::Mean);
  Vector w(p.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) w[i] = 1.0 / p[i];
  return hajek_mean(sample.y_b(), w);
}

}  // namespace npfuse
