#include "npfuse/glm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "npfuse/mathx.hpp"

namespace npfuse {

namespace {

constexpr double kSeparationProbTol = 1e-10;
constexpr double kSeparationNormTol = 1e3;

void check_design(const Matrix& X, Eigen::Index n_resp) {
  require(X.rows() == n_resp, Err::LengthMismatch, "rows(X) != length(response)");
  require(X.rows() > 0 && X.cols() > 0, Err::EmptySample, "empty design matrix");
}

void check_full_rank(const Matrix& X) {
  Eigen::ColPivHouseholderQR<Matrix> qr(X);
  qr.setThreshold(1e-10);
  if (qr.rank() < X.cols()) fail(Err::SingularDesign, "design matrix is rank deficient");
}

Vector resolve_weights(const std::optional<Vector>& weights, Eigen::Index n) {
  if (!weights) return Vector::Ones(n);
  require(weights->size() == n, Err::LengthMismatch, "weights length != rows");
  require((weights->array() > 0.0).all(), Err::ConfigInvalid, "weights must be positive");
  return *weights;
}

double logistic_loglik(const Matrix& X, const Vector& t, const Vector& w, const Vector& beta) {
  double ll = 0.0;
  const Vector eta = X * beta;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    // log p = -log(1+e^-eta), log(1-p) = -eta - log(1+e^-eta)
    const double e = eta[i];
    const double log1pe = e > 35.0 ? e : std::log1p(std::exp(e));
    ll += w[i] * (t[i] * e - log1pe);
  }
  return ll;
}

double beta_loglik(const Matrix& X, const Vector& p, const Vector& gamma, double phi) {
  const Vector eta = X * gamma;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const double mu = inv_logit(eta[i]);
    const double a = phi * mu;
    const double b = phi * (1.0 - mu);
    ll += std::lgamma(phi) - std::lgamma(a) - std::lgamma(b) + (a - 1.0) * std::log(p[i]) +
          (b - 1.0) * std::log1p(-p[i]);
  }
  return ll;
}

}  // namespace

GlmFit fit_logistic(const Matrix& X, const Vector& t, const std::optional<Vector>& weights,
                    const GlmControl& control) {
  check_design(X, t.size());
  for (Eigen::Index i = 0; i < t.size(); ++i)
    require(t[i] == 0.0 || t[i] == 1.0, Err::ResponseOutOfRange, "t must be 0/1");
  check_full_rank(X);
  const Vector w = resolve_weights(weights, X.rows());

  // Single observed class can never yield a finite MLE.
  const double tmin = t.minCoeff(), tmax = t.maxCoeff();
  if (tmin == tmax) fail(Err::Separation, "response has a single class");

  GlmFit fit;
  fit.family = Family::Logistic;
  Vector beta = Vector::Zero(X.cols());
  double ll = logistic_loglik(X, t, w, beta);
  fit.loglik_trace.push_back(ll);

  Matrix info(X.cols(), X.cols());
  for (int iter = 1; iter <= control.max_iter; ++iter) {
    const Vector eta = X * beta;
    Vector p(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) p[i] = inv_logit(eta[i]);
    const Vector score = X.transpose() * (w.array() * (t - p).array()).matrix();

    bool pinned = false;
    for (Eigen::Index i = 0; i < p.size(); ++i)
      if (p[i] < kSeparationProbTol || p[i] > 1.0 - kSeparationProbTol) pinned = true;
    if (pinned && beta.norm() > kSeparationNormTol)
      fail(Err::Separation, "fitted probabilities pinned at 0/1 with divergent coefficients");

    if (score.cwiseAbs().maxCoeff() <= control.tol) {
      fit.converged = true;
      fit.iterations = iter - 1;
      break;
    }

    const Vector wirls = (w.array() * p.array() * (1.0 - p.array())).matrix();
    info = X.transpose() * wirls.asDiagonal() * X;
    Eigen::LDLT<Matrix> ldlt(info);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
      fail(Err::SingularDesign, "information matrix not positive definite");
    Vector step = ldlt.solve(score);

    double new_ll = logistic_loglik(X, t, w, beta + step);
    // Halve only on real decreases; comparisons at the floating-point noise
    // floor of the log-likelihood sum must not strangle a converged step.
    const double noise = 1e-10 * (1.0 + std::abs(ll));
    int halvings = 0;
    while (new_ll < ll - noise && halvings < control.max_halvings) {
      step *= 0.5;
      new_ll = logistic_loglik(X, t, w, beta + step);
      ++halvings;
    }
    beta += step;
    ll = new_ll;
    fit.loglik_trace.push_back(ll);
    fit.iterations = iter;
  }
  if (!fit.converged) {
    const Vector eta = X * beta;
    bool pinned = false;
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      const double p = inv_logit(eta[i]);
      if (p < kSeparationProbTol || p > 1.0 - kSeparationProbTol) pinned = true;
    }
    if (pinned && beta.norm() > kSeparationNormTol)
      fail(Err::Separation, "fitted probabilities pinned at 0/1 with divergent coefficients");
    fail(Err::NoConvergence, "IRLS did not converge in " + std::to_string(control.max_iter) +
                                 " iterations");
  }

  fit.coefficients = beta;
  fit.log_likelihood = ll;
  const Vector eta = X * beta;
  Vector p(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) p[i] = inv_logit(eta[i]);
  const Vector wirls = (w.array() * p.array() * (1.0 - p.array())).matrix();
  info = X.transpose() * wirls.asDiagonal() * X;
  fit.vcov = info.ldlt().solve(Matrix::Identity(X.cols(), X.cols()));
  fit.vcov_sampling = fit.vcov;
  return fit;
}

GlmFit fit_linear(const Matrix& X, const Vector& y, const std::optional<Vector>& weights) {
  check_design(X, y.size());
  require(X.rows() > X.cols(), Err::Underdetermined, "need rows(X) > cols(X)");
  const Vector w = resolve_weights(weights, X.rows());

  const Vector sw = w.array().sqrt();
  const Matrix Xw = sw.asDiagonal() * X;
  Eigen::ColPivHouseholderQR<Matrix> qr(Xw);
  qr.setThreshold(1e-10);
  if (qr.rank() < X.cols()) fail(Err::SingularDesign, "design matrix is rank deficient");
  const Vector yw = sw.asDiagonal() * y;
  const Vector theta = qr.solve(yw);

  const Vector resid = y - X * theta;
  const double rss = (w.array() * resid.array().square()).sum();
  const double df = static_cast<double>(X.rows() - X.cols());
  const double sigma2 = rss / df;

  GlmFit fit;
  fit.family = Family::Linear;
  fit.coefficients = theta;
  fit.dispersion = std::sqrt(sigma2);
  fit.converged = true;
  fit.iterations = 1;
  const Matrix xtx = Xw.transpose() * Xw;
  fit.vcov = sigma2 * xtx.ldlt().solve(Matrix::Identity(X.cols(), X.cols()));
  const double n = static_cast<double>(X.rows());
  fit.log_likelihood =
      -0.5 * n * std::log(2.0 * M_PI * std::max(sigma2, 1e-300)) - 0.5 * rss / std::max(sigma2, 1e-300);

  Matrix vs = Matrix::Zero(X.cols() + 1, X.cols() + 1);
  const double y_scale = y.size() > 1 ? 1.0 + sample_sd(y) : 1.0;
  vs.topLeftCorner(X.cols(), X.cols()) =
      std::max(sigma2, 1e-16 * y_scale * y_scale) *
      xtx.ldlt().solve(Matrix::Identity(X.cols(), X.cols()));
  vs(X.cols(), X.cols()) = 1.0 / (2.0 * df);  // asymptotic var of log sigma
  fit.vcov_sampling = vs;
  return fit;
}

GlmFit fit_beta_regression(const Matrix& X, const Vector& p, const GlmControl& control) {
  check_design(X, p.size());
  for (Eigen::Index i = 0; i < p.size(); ++i)
    require(p[i] > 0.0 && p[i] < 1.0, Err::ResponseOutOfRange,
            "beta regression response must lie strictly inside (0,1)");
  check_full_rank(X);

  const Eigen::Index pc = X.cols();
  // Start gamma from OLS on the logit scale, phi from response moments.
  Vector lp(p.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) lp[i] = logit(p[i]);
  Eigen::ColPivHouseholderQR<Matrix> qr(X);
  Vector gamma = qr.solve(lp);
  double mu_var = 0.0, resid_var = 0.0;
  {
    const Vector eta = X * gamma;
    double m2 = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      const double mu = inv_logit(eta[i]);
      mu_var += mu * (1.0 - mu);
      m2 += (p[i] - mu) * (p[i] - mu);
    }
    mu_var /= static_cast<double>(p.size());
    resid_var = m2 / static_cast<double>(p.size());
  }
  double phi = std::clamp(mu_var / std::max(resid_var, 1e-12) - 1.0, 1.0, 1e6);

  // Newton ascent on (gamma, log phi) with analytic score and observed
  // information; step-halving keeps the log-likelihood non-decreasing.
  Vector psi(pc + 1);
  psi.head(pc) = gamma;
  psi[pc] = std::log(phi);

  GlmFit fit;
  fit.family = Family::Beta;
  double ll = glm_log_likelihood(Family::Beta, X, p, psi);
  fit.loglik_trace.push_back(ll);

  Matrix hess(pc + 1, pc + 1);
  for (int iter = 1; iter <= control.max_iter; ++iter) {
    gamma = psi.head(pc);
    phi = std::exp(psi[pc]);
    const Vector eta = X * gamma;

    Vector g = Vector::Zero(pc + 1);
    hess.setZero();
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      const double mu = inv_logit(eta[i]);
      const double a = phi * mu, b = phi * (1.0 - mu);
      const double pstar = std::log(p[i]) - std::log1p(-p[i]);
      const double mustar = digamma(a) - digamma(b);
      const double dmu = mu * (1.0 - mu);

      const double dl_deta = phi * (pstar - mustar) * dmu;
      const double dl_dphi = digamma(phi) - mu * digamma(a) - (1.0 - mu) * digamma(b) +
                             mu * std::log(p[i]) + (1.0 - mu) * std::log1p(-p[i]);

      g.head(pc) += dl_deta * X.row(i).transpose();
      g[pc] += phi * dl_dphi;

      const double t1 = trigamma(a), t0 = trigamma(b);
      const double d2l_deta2 =
          phi * dmu * (-phi * (t1 + t0) * dmu + (pstar - mustar) * (1.0 - 2.0 * mu));
      const double d2l_detadphi = dmu * ((pstar - mustar) - phi * (t1 * mu - t0 * (1.0 - mu)));
      const double d2l_dphi2 = trigamma(phi) - mu * mu * t1 - (1.0 - mu) * (1.0 - mu) * t0;

      hess.topLeftCorner(pc, pc) += d2l_deta2 * X.row(i).transpose() * X.row(i);
      const Vector cross = (phi * d2l_detadphi) * X.row(i).transpose();
      hess.block(0, pc, pc, 1) += cross;
      hess.block(pc, 0, 1, pc) += cross.transpose();
      hess(pc, pc) += phi * dl_dphi + phi * phi * d2l_dphi2;
    }

    // Gradient components carry the floating-point noise of a |ll|-sized sum,
    // so the tolerance scales with the attained log-likelihood.
    const double tol_g = control.tol * std::max(1.0, std::abs(ll));
    if (g.cwiseAbs().maxCoeff() <= tol_g) {
      fit.converged = true;
      fit.iterations = iter - 1;
      break;
    }

    auto try_step = [&](const Matrix& h) -> std::optional<std::pair<Vector, double>> {
      Eigen::FullPivLU<Matrix> lu(-h);
      if (!lu.isInvertible()) return std::nullopt;
      Vector step = lu.solve(g);
      double new_ll = glm_log_likelihood(Family::Beta, X, p, psi + step);
      const double noise = 1e-10 * (1.0 + std::abs(ll));
      int halvings = 0;
      while ((!std::isfinite(new_ll) || new_ll < ll - noise) && halvings < control.max_halvings) {
        step *= 0.5;
        new_ll = glm_log_likelihood(Family::Beta, X, p, psi + step);
        ++halvings;
      }
      if (!std::isfinite(new_ll) || new_ll < ll - noise) return std::nullopt;
      return std::make_pair(step, new_ll);
    };

    // Plain Newton, with Levenberg damping when the observed information is
    // indefinite away from the optimum.
    auto step = try_step(hess);
    for (double damp : {1e-4, 1e-2, 1.0, 100.0}) {
      if (step) break;
      Matrix damped = hess;
      for (Eigen::Index j = 0; j < damped.rows(); ++j)
        damped(j, j) -= damp * (std::abs(hess(j, j)) + 1.0);
      step = try_step(damped);
    }
    if (!step) {
      // No ascent direction improves the likelihood: accept the point if the
      // gradient noise floor explains the residual, else report failure.
      if (g.cwiseAbs().maxCoeff() <= 1e4 * tol_g) {
        fit.converged = true;
        fit.iterations = iter;
        break;
      }
      fail(Err::NoConvergence, "beta regression step failed");
    }
    psi += step->first;
    ll = step->second;
    fit.loglik_trace.push_back(ll);
    fit.iterations = iter;
  }
  if (!fit.converged)
    fail(Err::NoConvergence, "beta regression did not converge in " +
                                 std::to_string(control.max_iter) + " iterations");

  fit.coefficients = psi.head(pc);
  fit.dispersion = std::exp(psi[pc]);
  fit.log_likelihood = ll;
  const Matrix vs = (-hess).ldlt().solve(Matrix::Identity(pc + 1, pc + 1));
  fit.vcov_sampling = vs;
  fit.vcov = vs.topLeftCorner(pc, pc);
  return fit;
}

double glm_log_likelihood(Family family, const Matrix& X, const Vector& response,
                          const Vector& params, const std::optional<Vector>& weights) {
  const Vector w = resolve_weights(weights, X.rows());
  switch (family) {
    case Family::Logistic: {
      require(params.size() == X.cols(), Err::DimensionMismatch, "params size");
      return logistic_loglik(X, response, w, params);
    }
    case Family::Linear: {
      require(params.size() == X.cols() + 1, Err::DimensionMismatch, "params size");
      const double sigma = std::exp(params[X.cols()]);
      const Vector resid = response - X * params.head(X.cols());
      const double rss = (w.array() * resid.array().square()).sum();
      return -0.5 * w.sum() * std::log(2.0 * M_PI) - w.sum() * std::log(sigma) -
             0.5 * rss / (sigma * sigma);
    }
    case Family::Beta: {
      require(params.size() == X.cols() + 1, Err::DimensionMismatch, "params size");
      return beta_loglik(X, response, params.head(X.cols()), std::exp(params[X.cols()]));
    }
  }
  fail(Err::ConfigInvalid, "unknown family");
}

Vector glm_score(Family family, const Matrix& X, const Vector& response, const Vector& params,
                 const std::optional<Vector>& weights) {
  const Vector w = resolve_weights(weights, X.rows());
  switch (family) {
    case Family::Logistic: {
      const Vector eta = X * params;
      Vector p(eta.size());
      for (Eigen::Index i = 0; i < eta.size(); ++i) p[i] = inv_logit(eta[i]);
      return X.transpose() * (w.array() * (response - p).array()).matrix();
    }
    case Family::Linear: {
      const Eigen::Index pc = X.cols();
      const double sigma = std::exp(params[pc]);
      const Vector resid = response - X * params.head(pc);
      Vector g(pc + 1);
      g.head(pc) = X.transpose() * (w.array() * resid.array()).matrix() / (sigma * sigma);
      const double rss = (w.array() * resid.array().square()).sum();
      g[pc] = -w.sum() + rss / (sigma * sigma);
      return g;
    }
    case Family::Beta: {
      const Eigen::Index pc = X.cols();
      const double phi = std::exp(params[pc]);
      const Vector eta = X * params.head(pc);
      Vector g = Vector::Zero(pc + 1);
      for (Eigen::Index i = 0; i < X.rows(); ++i) {
        const double mu = inv_logit(eta[i]);
        const double a = phi * mu, b = phi * (1.0 - mu);
        const double pstar = std::log(response[i]) - std::log1p(-response[i]);
        const double mustar = digamma(a) - digamma(b);
        g.head(pc) += phi * (pstar - mustar) * mu * (1.0 - mu) * X.row(i).transpose();
        g[pc] += phi * (digamma(phi) - mu * digamma(a) - (1.0 - mu) * digamma(b) +
                        mu * std::log(response[i]) + (1.0 - mu) * std::log1p(-response[i]));
      }
      return g;
    }
  }
  fail(Err::ConfigInvalid, "unknown family");
}

Vector predict(const GlmFit& fit, const Matrix& X_new, PredictScale scale) {
  require(X_new.cols() == fit.coefficients.size(), Err::DimensionMismatch,
          "X_new column count != fitted coefficient count");
  Vector eta = X_new * fit.coefficients;
  if (scale == PredictScale::LinearPredictor || fit.family == Family::Linear) return eta;
  for (Eigen::Index i = 0; i < eta.size(); ++i) eta[i] = inv_logit(eta[i]);
  return eta;
}

PosteriorDraws posterior_sample(Family family, const Matrix& X, const Vector& response,
                                const PosteriorConfig& config,
                                const std::optional<Vector>& weights) {
  require(config.n_draws >= 1, Err::ConfigInvalid, "n_draws must be >= 1");
  require(config.burn_in >= 0 && config.thin >= 1, Err::ConfigInvalid, "bad MCMC config");

  GlmFit mle;
  switch (family) {
    case Family::Logistic: mle = fit_logistic(X, response, weights); break;
    case Family::Linear: mle = fit_linear(X, response, weights); break;
    case Family::Beta: mle = fit_beta_regression(X, response); break;
  }

  const Eigen::Index pc = X.cols();
  const bool has_disp = family != Family::Logistic;
  const Eigen::Index dim = pc + (has_disp ? 1 : 0);

  // Flat prior on log dispersion truncated at a numerical floor so that an
  // exact-fit response (zero residuals) keeps the posterior proper.
  const double resp_scale = 1.0 + (response.size() > 1 ? sample_sd(response) : 0.0);
  const double log_disp_floor = std::log(1e-6 * resp_scale);

  Vector psi(dim);
  psi.head(pc) = mle.coefficients;
  if (has_disp)
    psi[pc] = std::max(std::log(std::max(*mle.dispersion, 1e-300)), log_disp_floor);

  Matrix prop = *mle.vcov_sampling;
  const double scale =
      config.proposal_scale > 0.0 ? config.proposal_scale : 2.38 * 2.38 / static_cast<double>(dim);
  prop *= scale;
  Eigen::LLT<Matrix> llt(prop);
  if (llt.info() != Eigen::Success) {
    prop += 1e-10 * Matrix::Identity(dim, dim);
    llt.compute(prop);
    require(llt.info() == Eigen::Success, Err::SingularDesign, "proposal covariance not PD");
  }
  const Matrix L = llt.matrixL();

  Rng rng = Rng::derive(config.seed, 0x6d636d63ULL);
  double ll = glm_log_likelihood(family, X, response, psi, weights);

  PosteriorDraws out;
  out.family = family;
  out.has_dispersion = has_disp;
  out.burn_in = config.burn_in;
  out.thinning = config.thin;
  out.draws = Matrix(config.n_draws, dim);

  const Eigen::Index total = config.burn_in + config.n_draws * config.thin;
  Eigen::Index accepted = 0, kept = 0;
  Vector z(dim), cand(dim);
  for (Eigen::Index iter = 0; iter < total; ++iter) {
    for (Eigen::Index j = 0; j < dim; ++j) z[j] = rng.normal();
    cand = psi + L * z;
    const bool below_floor = has_disp && cand[pc] < log_disp_floor;
    const double cll =
        below_floor ? -std::numeric_limits<double>::infinity()
                    : glm_log_likelihood(family, X, response, cand, weights);
    if (std::isfinite(cll) && std::log(rng.uniform()) < cll - ll) {
      psi = cand;
      ll = cll;
      ++accepted;
    }
    if (iter >= config.burn_in && (iter - config.burn_in + 1) % config.thin == 0) {
      out.draws.row(kept).head(pc) = psi.head(pc).transpose();
      if (has_disp) out.draws(kept, pc) = std::exp(psi[pc]);
      ++kept;
    }
  }
  out.acceptance_rate = static_cast<double>(accepted) / static_cast<double>(total);
  if (out.acceptance_rate < 0.01)
    fail(Err::ChainDegenerate, "Metropolis acceptance rate below 1%");
  return out;
}

PosteriorDraws subsample_draws(const PosteriorDraws& draws, Eigen::Index m, Rng& rng) {
  require(m >= 1 && m <= draws.n_draws(), Err::ConfigInvalid, "subsample size out of range");
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(draws.n_draws()));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<Eigen::Index>(i);
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto j = i + static_cast<Eigen::Index>(rng.uniform_int(
                           static_cast<std::uint64_t>(idx.size() - static_cast<std::size_t>(i))));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  idx.resize(static_cast<std::size_t>(m));
  std::sort(idx.begin(), idx.end());

  PosteriorDraws out = draws;
  out.draws = Matrix(m, draws.draws.cols());
  for (Eigen::Index i = 0; i < m; ++i) out.draws.row(i) = draws.draws.row(idx[static_cast<std::size_t>(i)]);
  return out;
}

Matrix predict(const PosteriorDraws& draws, const Matrix& X_new, PredictScale scale) {
  require(X_new.cols() == draws.n_coef(), Err::DimensionMismatch,
          "X_new column count != draw coefficient count");
  Matrix eta = draws.draws.leftCols(draws.n_coef()) * X_new.transpose();  // M x n
  if (scale == PredictScale::Mean && draws.family != Family::Linear) {
    for (Eigen::Index i = 0; i < eta.rows(); ++i)
      for (Eigen::Index j = 0; j < eta.cols(); ++j) eta(i, j) = inv_logit(eta(i, j));
  }
  return eta;
}

}  // namespace npfuse
