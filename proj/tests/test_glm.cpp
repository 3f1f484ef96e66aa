#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "npfuse/glm.hpp"
#include "npfuse/mathx.hpp"
#include "npfuse/rng.hpp"

using namespace npfuse;

namespace {

// The two-group dataset with success ratios 1/4 (x=0) and 3/4 (x=1); the
// saturated-model closed form gives beta0 = -ln 3, beta1 = 2 ln 3.
void two_group_data(Matrix& X, Vector& t, int per_group = 40) {
  const int n = 2 * per_group;
  X = Matrix(n, 2);
  t = Vector(n);
  for (int i = 0; i < per_group; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = 0.0;
    t[i] = i < per_group / 4 ? 1.0 : 0.0;
  }
  for (int i = 0; i < per_group; ++i) {
    X(per_group + i, 0) = 1.0;
    X(per_group + i, 1) = 1.0;
    t[per_group + i] = i < 3 * per_group / 4 ? 1.0 : 0.0;
  }
}

}  // namespace

TEST_CASE("logistic intercept-only with balanced response gives zero") {
  Matrix X = Matrix::Ones(4, 1);
  Vector t(4);
  t << 1, 1, 0, 0;
  const GlmFit fit = fit_logistic(X, t);
  CHECK(fit.converged);
  CHECK(fit.coefficients[0] == doctest::Approx(0.0).epsilon(1e-10));
}

TEST_CASE("logistic two-group closed form") {
  Matrix X;
  Vector t;
  two_group_data(X, t);
  const GlmFit fit = fit_logistic(X, t);
  CHECK(fit.converged);
  CHECK(fit.coefficients[0] == doctest::Approx(-std::log(3.0)).epsilon(1e-7));
  CHECK(fit.coefficients[1] == doctest::Approx(2.0 * std::log(3.0)).epsilon(1e-7));
}

TEST_CASE("logistic single-class response reports separation") {
  Matrix X = Matrix::Ones(5, 1);
  Vector t = Vector::Ones(5);
  try {
    fit_logistic(X, t);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Err::Separation);
  }
}

TEST_CASE("logistic IRLS log-likelihood is non-decreasing") {
  Rng rng(11);
  Matrix X(60, 3);
  Vector t(60);
  for (Eigen::Index i = 0; i < 60; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = rng.normal();
    X(i, 2) = rng.normal();
    t[i] = rng.bernoulli(inv_logit(0.5 + X(i, 1) - 0.7 * X(i, 2))) ? 1.0 : 0.0;
  }
  const GlmFit fit = fit_logistic(X, t);
  REQUIRE(fit.loglik_trace.size() >= 2);
  for (std::size_t i = 1; i < fit.loglik_trace.size(); ++i) {
    const double noise = 1e-9 * (1.0 + std::abs(fit.loglik_trace[i - 1]));
    CHECK(fit.loglik_trace[i] >= fit.loglik_trace[i - 1] - noise);
  }
}

TEST_CASE("linear exact fit has zero residual dispersion") {
  Matrix X(4, 2);
  X << 1, 0, 1, 1, 1, 2, 1, 3;
  Vector y(4);
  y << 1, 3, 5, 7;
  const GlmFit fit = fit_linear(X, y);
  CHECK(fit.coefficients[0] == doctest::Approx(1.0));
  CHECK(fit.coefficients[1] == doctest::Approx(2.0));
  CHECK(*fit.dispersion == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("linear intercept-only hand example") {
  Matrix X = Matrix::Ones(2, 1);
  Vector y(2);
  y << 1, 3;
  const GlmFit fit = fit_linear(X, y);
  CHECK(fit.coefficients[0] == doctest::Approx(2.0));
  CHECK(*fit.dispersion * *fit.dispersion == doctest::Approx(2.0));
}

TEST_CASE("linear duplicate columns are singular") {
  Matrix X(5, 2);
  for (int i = 0; i < 5; ++i) {
    X(i, 0) = i;
    X(i, 1) = i;
  }
  Vector y = Vector::Ones(5);
  try {
    fit_linear(X, y);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Err::SingularDesign);
  }
}

TEST_CASE("linear underdetermined system is rejected") {
  Matrix X = Matrix::Identity(2, 2);
  Vector y = Vector::Ones(2);
  try {
    fit_linear(X, y);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Err::Underdetermined);
  }
}

TEST_CASE("beta regression intercept-only symmetric responses") {
  Matrix X = Matrix::Ones(4, 1);
  Vector p(4);
  p << 0.3, 0.7, 0.4, 0.6;
  const GlmFit fit = fit_beta_regression(X, p);
  CHECK(fit.converged);
  CHECK(std::abs(fit.coefficients[0]) < 1e-6);
}

TEST_CASE("beta regression recovers generating parameters") {
  Rng rng(2024);
  const int n = 5000;
  const double phi = 30.0;
  Matrix X(n, 2);
  Vector p(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = rng.normal();
    const double mu = inv_logit(-1.0 + 0.5 * X(i, 1));
    p[i] = rng.beta(phi * mu, phi * (1.0 - mu));
    p[i] = std::min(std::max(p[i], 1e-12), 1.0 - 1e-12);
  }
  const GlmFit fit = fit_beta_regression(X, p);
  CHECK(fit.converged);
  CHECK(std::abs(fit.coefficients[0] - (-1.0)) < 0.1);
  CHECK(std::abs(fit.coefficients[1] - 0.5) < 0.1);
  CHECK(std::abs(*fit.dispersion - phi) / phi < 0.15);
}

TEST_CASE("beta regression rejects boundary responses") {
  Matrix X = Matrix::Ones(3, 1);
  Vector p(3);
  p << 0.2, 1.0, 0.4;
  try {
    fit_beta_regression(X, p);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Err::ResponseOutOfRange);
  }
}

TEST_CASE("analytic scores match central finite differences") {
  // Relative error < 1e-4 at 10 random parameter points per family.
  Rng rng(77);
  const int n = 40;
  Matrix X(n, 3);
  Vector yb(n), yc(n), pb(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = rng.normal();
    X(i, 2) = rng.uniform(-1.0, 1.0);
    yb[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    yc[i] = rng.normal(1.0, 2.0);
    pb[i] = rng.uniform(0.05, 0.95);
  }
  const double h = 1e-6;
  auto check_family = [&](Family fam, const Vector& resp, Eigen::Index dim) {
    for (int trial = 0; trial < 10; ++trial) {
      Vector params(dim);
      for (Eigen::Index j = 0; j < dim; ++j) params[j] = rng.uniform(-0.5, 0.5);
      const Vector score = glm_score(fam, X, resp, params);
      for (Eigen::Index j = 0; j < dim; ++j) {
        Vector up = params, dn = params;
        up[j] += h;
        dn[j] -= h;
        const double fd = (glm_log_likelihood(fam, X, resp, up) -
                           glm_log_likelihood(fam, X, resp, dn)) /
                          (2.0 * h);
        const double denom = std::max(1.0, std::abs(fd));
        CHECK(std::abs(score[j] - fd) / denom < 1e-4);
      }
    }
  };
  check_family(Family::Logistic, yb, 3);
  check_family(Family::Linear, yc, 4);
  check_family(Family::Beta, pb, 4);
}

TEST_CASE("predict applies the family inverse link") {
  GlmFit fit;
  fit.family = Family::Logistic;
  fit.coefficients = Vector::Zero(2);
  Matrix xn(3, 2);
  xn << 1, 0, 1, 1, 1, -1;
  const Vector p = predict(fit, xn, PredictScale::Mean);
  for (Eigen::Index i = 0; i < 3; ++i) CHECK(p[i] == doctest::Approx(0.5));

  GlmFit lin;
  lin.family = Family::Linear;
  lin.coefficients = Vector(2);
  lin.coefficients << 2, 1;
  Matrix xl(1, 2);
  xl << 1, 3;
  CHECK(predict(lin, xl, PredictScale::Mean)[0] == doctest::Approx(5.0));
  CHECK(predict(lin, xl, PredictScale::LinearPredictor)[0] ==
        predict(lin, xl, PredictScale::Mean)[0]);

  Matrix wrong(1, 3);
  wrong.setOnes();
  CHECK_THROWS_AS(predict(lin, wrong, PredictScale::Mean), Error);
}

TEST_CASE("posterior draws have the requested shape and positive dispersion") {
  Rng rng(5);
  const int n = 50;
  Matrix X(n, 2);
  Vector y(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = rng.normal();
    y[i] = 1.0 + 2.0 * X(i, 1) + rng.normal(0.0, 0.5);
  }
  PosteriorConfig cfg;
  cfg.n_draws = 300;
  cfg.burn_in = 200;
  cfg.seed = 99;
  const PosteriorDraws draws = posterior_sample(Family::Linear, X, y, cfg);
  CHECK(draws.n_draws() == 300);
  CHECK(draws.draws.cols() == 3);
  CHECK((draws.draws.col(2).array() > 0.0).all());
  CHECK(draws.acceptance_rate > 0.05);

  const Matrix pred = predict(draws, X, PredictScale::Mean);
  CHECK(pred.rows() == 300);
  CHECK(pred.cols() == n);

  Rng sub_rng(3);
  const PosteriorDraws sub = subsample_draws(draws, 200, sub_rng);
  CHECK(sub.n_draws() == 200);
}

TEST_CASE("posterior sampling is bit-reproducible for a fixed seed") {
  Rng rng(6);
  const int n = 40;
  Matrix X(n, 2);
  Vector t(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = rng.normal();
    t[i] = rng.bernoulli(inv_logit(X(i, 1))) ? 1.0 : 0.0;
  }
  PosteriorConfig cfg;
  cfg.n_draws = 100;
  cfg.burn_in = 100;
  cfg.seed = 4242;
  const PosteriorDraws a = posterior_sample(Family::Logistic, X, t, cfg);
  const PosteriorDraws b = posterior_sample(Family::Logistic, X, t, cfg);
  CHECK(a.draws == b.draws);
  CHECK(a.acceptance_rate == b.acceptance_rate);
}

TEST_CASE("posterior mean stays near the MLE on an exact linear fit") {
  Matrix X(10, 2);
  Vector y(10);
  for (int i = 0; i < 10; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = i;
    y[i] = 3.0 + 0.5 * i;
  }
  PosteriorConfig cfg;
  cfg.n_draws = 1000;
  cfg.burn_in = 500;
  cfg.seed = 31;
  const PosteriorDraws draws = posterior_sample(Family::Linear, X, y, cfg);
  for (Eigen::Index j = 0; j < 2; ++j) {
    const Vector col = draws.draws.col(j);
    const double mean = col.mean();
    const double sd = sample_sd(col);
    const double mle = j == 0 ? 3.0 : 0.5;
    CHECK(std::abs(mean - mle) <= 3.0 * std::max(sd, 1e-12));
  }
}

TEST_CASE("posterior mean of the two-group logistic slope is near the MLE") {
  Matrix X;
  Vector t;
  two_group_data(X, t);
  PosteriorConfig cfg;
  cfg.n_draws = 1000;
  cfg.burn_in = 1000;
  cfg.seed = 17;
  const PosteriorDraws draws = posterior_sample(Family::Logistic, X, t, cfg);
  const double mean_b1 = draws.draws.col(1).mean();
  CHECK(std::abs(mean_b1 - 2.0 * std::log(3.0)) < 0.5);
}

TEST_CASE("zero draws is a config error") {
  Matrix X = Matrix::Ones(4, 1);
  Vector y(4);
  y << 1, 2, 3, 4;
  PosteriorConfig cfg;
  cfg.n_draws = 0;
  try {
    posterior_sample(Family::Linear, X, y, cfg);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Err::ConfigInvalid);
  }
}

TEST_CASE("absurd proposal scale degenerates the chain") {
  Rng rng(8);
  const int n = 200;
  Matrix X(n, 2);
  Vector y(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = rng.normal();
    y[i] = X(i, 1) + rng.normal();
  }
  PosteriorConfig cfg;
  cfg.n_draws = 200;
  cfg.burn_in = 100;
  cfg.seed = 12;
  cfg.proposal_scale = 1e8;
  try {
    posterior_sample(Family::Linear, X, y, cfg);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Err::ChainDegenerate);
  }
}
