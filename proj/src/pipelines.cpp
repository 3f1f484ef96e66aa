#include "npfuse/pipelines.hpp"

#include <cmath>
#include <optional>

#include "npfuse/mathx.hpp"
#include "npfuse/parallel.hpp"

namespace npfuse {

std::string method_name(Method m) {
  switch (m) {
    case Method::UnweightedB: return "UW-B";
    case Method::PAPW: return "PAPW";
    case Method::PAPP: return "PAPP";
    case Method::IPSW: return "IPSW";
    case Method::PM: return "PM";
    case Method::AipwPapw: return "AIPW-PAPW";
    case Method::AipwPapp: return "AIPW-PAPP";
    case Method::AipwIpsw: return "AIPW-IPSW";
  }
  return "?";
}

namespace {

bool is_dr(Method m) {
  return m == Method::AipwPapw || m == Method::AipwPapp || m == Method::AipwIpsw;
}

bool uses_qr(Method m) {
  return m == Method::PAPW || m == Method::PAPP || m == Method::IPSW || is_dr(m);
}

bool uses_pm(Method m) { return m == Method::PM || is_dr(m); }

}  // namespace

std::string spec_label(Method m, const ModelSpec& spec) {
  if (is_dr(m)) return std::string(spec.qr_true ? "T" : "F") + (spec.pm_true ? "T" : "F");
  if (m == Method::PM) return spec.pm_true ? "T" : "F";
  if (uses_qr(m)) return spec.qr_true ? "T" : "F";
  return "-";
}

std::string cell_key(Method m, const ModelSpec& spec) {
  return method_name(m) + "|" + spec_label(m, spec);
}

namespace {

struct Rows {
  std::vector<UnitRecord> all, b, r;
};

Rows split_rows(const CombinedSample& s) {
  Rows rows;
  rows.all = s.records;
  for (const auto& rec : s.records) (rec.z == 1 ? rows.b : rows.r).push_back(rec);
  return rows;
}

Vector inv(const Vector& v) {
  Vector out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) out[i] = 1.0 / v[i];
  return out;
}

// Hajek-linearized Poisson variance of a weighted mean with inclusion
// probabilities pi: (1/Nhat^2) sum (1-pi) ((y - ybar)/pi)^2.
double plugin_hajek_variance(const Vector& y, const Vector& pi, double ybar) {
  double nhat = 0.0, v = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    nhat += 1.0 / pi[i];
    const double dev = (y[i] - ybar) / pi[i];
    v += (1.0 - pi[i]) * dev * dev;
  }
  return v / (nhat * nhat);
}

// M-estimation sandwich for the PMLE-weighted mean: stacks the mean equation
// with the pseudo-likelihood score, so the variance carries the uncertainty
// of the estimated propensities (dominated by the n_R reference weights).
double ipsw_sandwich_variance(const CombinedSample& s, const Matrix& xb, const Matrix& xr,
                              const Vector& pi_b_hat, const Vector& pi_r_fit,
                              const Vector& wr, double ybar) {
  const Vector yb = s.y_b();
  const double n_pop = (1.0 / pi_b_hat.array()).sum();  // -dG_mu/dmu
  const Eigen::Index d = xb.cols();

  double v_mu = 0.0;
  Vector cross = Vector::Zero(d);   // d G_mu / d beta
  Vector cov_b = Vector::Zero(d);   // Cov(G_mu, G_beta) over the S_B design
  Matrix jac = Matrix::Zero(d, d);  // d G_beta / d beta
  Matrix v_beta = Matrix::Zero(d, d);
  for (Eigen::Index i = 0; i < xb.rows(); ++i) {
    const double pi = pi_b_hat[i];
    const double resid = (yb[i] - ybar) / pi;
    v_mu += (1.0 - pi) * resid * resid;
    cross += resid * (1.0 - pi) * xb.row(i).transpose();
    cov_b += (1.0 - pi) * resid * xb.row(i).transpose();
    v_beta += (1.0 - pi) * xb.row(i).transpose() * xb.row(i);
  }
  for (Eigen::Index j = 0; j < xr.rows(); ++j) {
    const double pi = pi_r_fit[j];
    jac += pi * (1.0 - pi) * wr[j] * xr.row(j).transpose() * xr.row(j);
    // Reference-design contribution: Var(sum_R pi x / pi^R).
    v_beta += pi * pi * wr[j] * (wr[j] - 1.0) * xr.row(j).transpose() * xr.row(j);
  }
  Eigen::FullPivLU<Matrix> lu(jac);
  if (!lu.isInvertible()) fail(Err::SingularMatrix, "IPSW variance Jacobian singular");
  const Vector b = lu.solve(cross);
  const double var =
      (v_mu - 2.0 * b.dot(cov_b) + b.dot(v_beta * b)) / (n_pop * n_pop);
  return std::max(0.0, var);
}

// ---------------------------------------------------------------------------
// Frequentist context: lazily fits and caches the per-spec models.
// ---------------------------------------------------------------------------
class FreqContext {
 public:
  FreqContext(const CombinedSample& s, const PipelineOptions& opt, const ModelSpec& spec)
      : s_(s), opt_(opt), spec_(spec), rows_(split_rows(s)) {}

  const Matrix& xqr_papw_all() {
    if (!xqr_papw_all_)
      xqr_papw_all_ = working_design(opt_.sim_id, ModelRole::QrPapw, spec_.qr_true, rows_.all,
                                     opt_.fk);
    return *xqr_papw_all_;
  }

  const GlmFit& z_papw() {
    if (!z_papw_) z_papw_ = fit_logistic(xqr_papw_all(), s_.z_vector());
    return *z_papw_;
  }

  Vector p_papw_all() { return predict(z_papw(), xqr_papw_all(), PredictScale::Mean); }

  Vector p_papw_b() {
    const Matrix xb = working_design(opt_.sim_id, ModelRole::QrPapw, spec_.qr_true, rows_.b,
                                     opt_.fk);
    return predict(z_papw(), xb, PredictScale::Mean);
  }

  const GlmFit& z_papp() {
    if (!z_papp_) {
      const Matrix x = working_design(opt_.sim_id, ModelRole::QrPapp, spec_.qr_true, rows_.all,
                                      opt_.fk);
      z_papp_ = fit_logistic(x, s_.z_vector());
    }
    return *z_papp_;
  }

  Vector p_papp_b() {
    const Matrix xb = working_design(opt_.sim_id, ModelRole::QrPapp, spec_.qr_true, rows_.b,
                                     opt_.fk);
    return predict(z_papp(), xb, PredictScale::Mean);
  }

  Vector pir_hat_b() {
    if (!pir_hat_b_) {
      const Matrix xr = working_design(opt_.sim_id, ModelRole::PirModel, spec_.qr_true, rows_.r,
                                       opt_.fk);
      const GlmFit beta_fit = fit_beta_regression(xr, s_.pi_r_r());
      const Matrix xb = working_design(opt_.sim_id, ModelRole::PirModel, spec_.qr_true, rows_.b,
                                       opt_.fk);
      pir_hat_b_ = predict(beta_fit, xb, PredictScale::Mean);
    }
    return *pir_hat_b_;
  }

  const GlmFit& pmle() {
    if (!pmle_) {
      const Matrix xb = working_design(opt_.sim_id, ModelRole::QrPapp, spec_.qr_true, rows_.b,
                                       opt_.fk);
      const Matrix xr = working_design(opt_.sim_id, ModelRole::QrPapp, spec_.qr_true, rows_.r,
                                       opt_.fk);
      pmle_ = solve_pmle_designs(xb, xr, inv(s_.pi_r_r()));
    }
    return *pmle_;
  }

  Vector pi_ipsw_b() {
    const Matrix xb = working_design(opt_.sim_id, ModelRole::QrPapp, spec_.qr_true, rows_.b,
                                     opt_.fk);
    return predict(pmle(), xb, PredictScale::Mean);
  }

  const Matrix& xpm_all() {
    if (!xpm_all_)
      xpm_all_ = working_design(opt_.sim_id, ModelRole::Pm, spec_.pm_true, rows_.all, opt_.fk);
    return *xpm_all_;
  }

  const GlmFit& outcome_fit() {
    if (!outcome_fit_) {
      const Matrix xb = working_design(opt_.sim_id, ModelRole::Pm, spec_.pm_true, rows_.b,
                                       opt_.fk);
      outcome_fit_ = s_.outcome == OutcomeKind::Binary ? fit_logistic(xb, s_.y_b())
                                                       : fit_linear(xb, s_.y_b());
    }
    return *outcome_fit_;
  }

  Vector m_hat_all() { return predict(outcome_fit(), xpm_all(), PredictScale::Mean); }

  Vector sigma2_all(const Vector& m_hat) {
    Vector out(s_.size());
    if (s_.outcome == OutcomeKind::Binary) {
      for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = m_hat[i] * (1.0 - m_hat[i]);
    } else {
      const double s2 = *outcome_fit().dispersion * *outcome_fit().dispersion;
      out.setConstant(s2);
    }
    return out;
  }

  const Rows& rows() const { return rows_; }

  // PMLE over prebuilt working designs; mirrors solve_pmle on raw covariates.
  static GlmFit solve_pmle_designs(const Matrix& xb, const Matrix& xr, const Vector& wr,
                                   const GlmControl& control = {});

 private:
  const CombinedSample& s_;
  const PipelineOptions& opt_;
  ModelSpec spec_;
  Rows rows_;
  std::optional<Matrix> xqr_papw_all_, xpm_all_;
  std::optional<GlmFit> z_papw_, z_papp_, pmle_, outcome_fit_;
  std::optional<Vector> pir_hat_b_;
};

GlmFit FreqContext::solve_pmle_designs(const Matrix& xb, const Matrix& xr, const Vector& wr,
                                       const GlmControl& control) {
  const double n_b = static_cast<double>(xb.rows());
  require(wr.sum() > n_b, Err::Infeasible,
          "sum of reference weights does not exceed n_B; PMLE has no root");
  const Vector target = xb.colwise().sum().transpose();
  Vector beta = Vector::Zero(xb.cols());
  auto resid = [&](const Vector& b) {
    const Vector eta = xr * b;
    Vector u = target;
    for (Eigen::Index i = 0; i < xr.rows(); ++i)
      u -= inv_logit(eta[i]) * wr[i] * xr.row(i).transpose();
    return u;
  };
  Vector u = resid(beta);
  double unorm = u.cwiseAbs().maxCoeff();
  const double tol = control.tol * n_b;
  GlmFit fit;
  fit.family = Family::Logistic;
  for (int iter = 1; iter <= control.max_iter && unorm > tol; ++iter) {
    Matrix jac = Matrix::Zero(beta.size(), beta.size());
    const Vector eta = xr * beta;
    for (Eigen::Index i = 0; i < xr.rows(); ++i) {
      const double pi = inv_logit(eta[i]);
      jac -= pi * (1.0 - pi) * wr[i] * xr.row(i).transpose() * xr.row(i);
    }
    Eigen::FullPivLU<Matrix> lu(jac);
    if (!lu.isInvertible()) fail(Err::SingularJacobian, "PMLE Jacobian is singular");
    Vector step = -lu.solve(u);
    Vector new_u;
    double new_norm;
    int halvings = 0;
    for (;;) {
      new_u = resid(beta + step);
      new_norm = new_u.cwiseAbs().maxCoeff();
      if ((std::isfinite(new_norm) && new_norm < unorm) || halvings >= control.max_halvings)
        break;
      step *= 0.5;
      ++halvings;
    }
    beta += step;
    u = new_u;
    unorm = new_norm;
    fit.iterations = iter;
  }
  if (unorm > tol)
    fail(Err::NoConvergence, "PMLE Newton stalled at max|U| = " + std::to_string(unorm));
  fit.converged = true;
  fit.coefficients = beta;
  return fit;
}

// ---------------------------------------------------------------------------
// Posterior draw bundle shared by the Bayesian methods of one spec.
// ---------------------------------------------------------------------------
struct DrawBundle {
  Matrix p_b;        // M x n_B membership probabilities on S_B
  Matrix y_hat_all;  // M x n outcome-mean draws on every record
  std::optional<Matrix> pir_hat_b;  // M x n_B predicted pi^R (PAPP only)
};

class BayesContext {
 public:
  BayesContext(const CombinedSample& s, const PipelineOptions& opt, const ModelSpec& spec)
      : s_(s), opt_(opt), spec_(spec), rows_(split_rows(s)) {}

  // Membership-model draws on the PAPW covariate set (x*).
  const Matrix& p_papw_b() {
    if (!p_papw_b_) {
      if (opt_.engine == Engine::GLM) {
        const Matrix x = working_design(opt_.sim_id, ModelRole::QrPapw, spec_.qr_true, rows_.all,
                                        opt_.fk);
        const PosteriorDraws d = glm_draws(Family::Logistic, x, s_.z_vector(), 0x21ULL);
        const Matrix xb = working_design(opt_.sim_id, ModelRole::QrPapw, spec_.qr_true, rows_.b,
                                         opt_.fk);
        p_papw_b_ = predict(d, xb, PredictScale::Mean);
      } else {
        const Matrix x = bart_design(ModelRole::QrPapw, rows_.all);
        const Matrix xb = bart_design(ModelRole::QrPapw, rows_.b);
        auto model = bart::bart_fit_probit(x, s_.z_vector(), bart_config(opt_.bart_m_probit, 0x21ULL));
        p_papw_b_ = bart::bart_predict(model, xb);
      }
    }
    return *p_papw_b_;
  }

  const Matrix& p_papp_b() {
    if (!p_papp_b_) {
      if (opt_.engine == Engine::GLM) {
        const Matrix x = working_design(opt_.sim_id, ModelRole::QrPapp, spec_.qr_true, rows_.all,
                                        opt_.fk);
        const PosteriorDraws d = glm_draws(Family::Logistic, x, s_.z_vector(), 0x22ULL);
        const Matrix xb = working_design(opt_.sim_id, ModelRole::QrPapp, spec_.qr_true, rows_.b,
                                         opt_.fk);
        p_papp_b_ = predict(d, xb, PredictScale::Mean);
      } else {
        const Matrix x = bart_design(ModelRole::QrPapp, rows_.all);
        const Matrix xb = bart_design(ModelRole::QrPapp, rows_.b);
        auto model = bart::bart_fit_probit(x, s_.z_vector(), bart_config(opt_.bart_m_probit, 0x22ULL));
        p_papp_b_ = bart::bart_predict(model, xb);
      }
    }
    return *p_papp_b_;
  }

  const Matrix& pir_hat_b() {
    if (!pir_hat_b_) {
      if (opt_.engine == Engine::GLM) {
        const Matrix xr = working_design(opt_.sim_id, ModelRole::PirModel, spec_.qr_true, rows_.r,
                                         opt_.fk);
        const PosteriorDraws d = glm_draws(Family::Beta, xr, s_.pi_r_r(), 0x23ULL);
        const Matrix xb = working_design(opt_.sim_id, ModelRole::PirModel, spec_.qr_true, rows_.b,
                                         opt_.fk);
        pir_hat_b_ = predict(d, xb, PredictScale::Mean);
      } else {
        const Matrix xr = bart_design(ModelRole::PirModel, rows_.r);
        const Matrix xb = bart_design(ModelRole::PirModel, rows_.b);
        auto model =
            bart::bart_fit_logit_target(xr, s_.pi_r_r(), bart_config(opt_.bart_m_continuous, 0x23ULL));
        pir_hat_b_ = bart::bart_predict(model, xb);
      }
    }
    return *pir_hat_b_;
  }

  const Matrix& y_hat_all() {
    if (!y_hat_all_) {
      if (opt_.engine == Engine::GLM) {
        const Matrix xb = working_design(opt_.sim_id, ModelRole::Pm, spec_.pm_true, rows_.b,
                                         opt_.fk);
        const Family fam = s_.outcome == OutcomeKind::Binary ? Family::Logistic : Family::Linear;
        const PosteriorDraws d = glm_draws(fam, xb, s_.y_b(), 0x24ULL);
        const Matrix xall = working_design(opt_.sim_id, ModelRole::Pm, spec_.pm_true, rows_.all,
                                           opt_.fk);
        y_hat_all_ = predict(d, xall, PredictScale::Mean);
      } else {
        const Matrix xb = bart_design(ModelRole::Pm, rows_.b);
        const Matrix xall = bart_design(ModelRole::Pm, rows_.all);
        auto model = s_.outcome == OutcomeKind::Binary
                         ? bart::bart_fit_probit(xb, s_.y_b(),
                                                 bart_config(opt_.bart_m_probit, 0x24ULL))
                         : bart::bart_fit_continuous(
                               xb, s_.y_b(), bart_config(opt_.bart_m_continuous, 0x24ULL));
        y_hat_all_ = bart::bart_predict(model, xall);
      }
    }
    return *y_hat_all_;
  }

  const Rows& rows() const { return rows_; }

 private:
  PosteriorDraws glm_draws(Family fam, const Matrix& x, const Vector& resp,
                           std::uint64_t stream) {
    PosteriorConfig cfg;
    cfg.n_draws = opt_.mcmc_draws;
    cfg.burn_in = opt_.mcmc_burn_in;
    cfg.seed = Rng::derive_seed(opt_.seed, stream + (spec_.qr_true ? 0x100 : 0) +
                                               (spec_.pm_true ? 0x200 : 0));
    PosteriorDraws d = posterior_sample(fam, x, resp, cfg);
    if (opt_.m_sub > 0 && opt_.m_sub < d.n_draws()) {
      Rng rng = Rng::derive(cfg.seed, 0x5b5bULL);
      d = subsample_draws(d, opt_.m_sub, rng);
    }
    return d;
  }

  bart::BartConfig bart_config(int m_trees, std::uint64_t stream) const {
    bart::BartConfig cfg;
    cfg.m = m_trees;
    cfg.n_draws = opt_.bart_draws;
    cfg.burn_in = opt_.bart_burn_in;
    cfg.thin = opt_.bart_thin;
    cfg.seed = Rng::derive_seed(opt_.seed, stream + (spec_.qr_true ? 0x100 : 0) +
                                               (spec_.pm_true ? 0x200 : 0) + 0xBA00);
    return cfg;
  }

  const CombinedSample& s_;
  const PipelineOptions& opt_;
  ModelSpec spec_;
  Rows rows_;
  std::optional<Matrix> p_papw_b_, p_papp_b_, pir_hat_b_, y_hat_all_;
};

// Rubin combination of per-draw Hajek points for a pseudo-weighted mean.
CellResult bayes_qr_cell(const CombinedSample& s, const PseudoInclusion& pib) {
  const Vector yb = s.y_b();
  const Eigen::Index m = pib.m();
  Vector points(m), withins(m);
  const Vector zero_r = Vector::Zero(s.n_r);
  for (Eigen::Index i = 0; i < m; ++i) {
    const Vector pvec = pib.values.row(i).transpose();
    points[i] = hajek_mean(yb, inv(pvec));
    withins[i] = within_variance_parts(s, zero_r, pvec).sb_term;
  }
  const VarianceReport var = rubin_combine(points, withins);
  CellResult cell;
  cell.point = points.mean();
  cell.variance = var.variance;
  cell.ok = true;
  return cell;
}

CellResult bayes_pm_cell(const CombinedSample& s, const Matrix& y_hat_all) {
  const auto idx_r = s.indices_r();
  const Vector pir = s.pi_r_r();
  const Vector wr = inv(pir);
  const Eigen::Index m = y_hat_all.rows();
  Vector points(m), withins(m);
  const Vector ones_b = Vector::Ones(s.n_b);
  for (Eigen::Index i = 0; i < m; ++i) {
    Vector yhat_r(s.n_r);
    for (Eigen::Index j = 0; j < s.n_r; ++j)
      yhat_r[j] = y_hat_all(i, idx_r[static_cast<std::size_t>(j)]);
    points[i] = hajek_mean(yhat_r, wr);
    withins[i] = within_variance_parts(s, yhat_r, ones_b).sr_term;
  }
  const VarianceReport var = rubin_combine(points, withins);
  CellResult cell;
  cell.point = points.mean();
  cell.variance = var.variance;
  cell.ok = true;
  return cell;
}

CellResult bayes_dr_cell(const CombinedSample& s, const DrawSet& draws, BayesRoute route,
                         bool within_by_cluster) {
  const BayesAipwResult res = aipw_bayes(s, draws, route);
  const auto idx_r = s.indices_r();
  Vector withins(draws.M);
  for (Eigen::Index m = 0; m < draws.M; ++m) {
    Vector yhat_r(s.n_r);
    for (Eigen::Index j = 0; j < s.n_r; ++j)
      yhat_r[j] = draws.y_imputed(m, idx_r[static_cast<std::size_t>(j)]);
    withins[m] = within_variance_approx(s, yhat_r, draws.pib_draws.row(m).transpose(),
                                        within_by_cluster);
  }
  const VarianceReport var = rubin_combine(res.per_draw, withins);
  CellResult cell;
  cell.point = res.point;
  cell.variance = var.variance;
  cell.ok = true;
  return cell;
}

CellResult evaluate_frequentist(const CombinedSample& s, const PipelineOptions& opt,
                                FreqContext& ctx, Method method, const ModelSpec& spec);

CellResult evaluate_bayesian(const CombinedSample& s, const PipelineOptions& opt,
                             BayesContext& ctx, Method method, const ModelSpec& spec) {
  CellResult cell;
  switch (method) {
    case Method::UnweightedB: {
      const Vector yb = s.y_b();
      cell.point = yb.mean();
      cell.variance = yb.size() > 1 ? sample_variance(yb) / static_cast<double>(yb.size()) : 0.0;
      cell.ok = true;
      return cell;
    }
    case Method::PAPW:
      return bayes_qr_cell(s, papw(s, ctx.p_papw_b()));
    case Method::PAPP:
      return bayes_qr_cell(s, papp(s, ctx.pir_hat_b(), ctx.p_papp_b()));
    case Method::IPSW:
      fail(Err::ConfigInvalid, "IPSW has no two-step Bayesian form (PMLE is frequentist)");
    case Method::PM:
      return bayes_pm_cell(s, ctx.y_hat_all());
    case Method::AipwPapw: {
      const PseudoInclusion pib = papw(s, ctx.p_papw_b());
      DrawSet draws;
      draws.M = pib.m();
      draws.pib_draws = pib.values;
      draws.y_imputed = ctx.y_hat_all();
      require(draws.y_imputed.rows() == draws.M, Err::DrawCountMismatch,
              "outcome and membership draw counts differ");
      return bayes_dr_cell(s, draws, BayesRoute::PapwKnownPir, opt.within_by_cluster);
    }
    case Method::AipwPapp: {
      const PseudoInclusion pib = papp(s, ctx.pir_hat_b(), ctx.p_papp_b());
      DrawSet draws;
      draws.M = pib.m();
      draws.pib_draws = pib.values;
      draws.pir_pred_draws = ctx.pir_hat_b();
      draws.y_imputed = ctx.y_hat_all();
      require(draws.y_imputed.rows() == draws.M, Err::DrawCountMismatch,
              "outcome and membership draw counts differ");
      return bayes_dr_cell(s, draws, BayesRoute::PappUnknownPir, opt.within_by_cluster);
    }
    case Method::AipwIpsw:
      fail(Err::ConfigInvalid, "AIPW-IPSW has no two-step Bayesian form");
  }
  fail(Err::ConfigInvalid, "unknown method");
}

double point_from_context(const CombinedSample& s, const PipelineOptions& opt, FreqContext& ctx,
                          Method method, const ModelSpec& spec);
double plugin_dr_point(const CombinedSample& s, FreqContext& ctx, const Vector& pib,
                       const PipelineOptions& opt);

// One bootstrap pass evaluating every requested frequentist method per
// replicate; shares replicate construction across methods.
std::map<Method, double> bootstrap_variances(const CombinedSample& s, const PipelineOptions& opt,
                                             const std::vector<Method>& methods,
                                             const ModelSpec& spec) {
  const Eigen::Index B = opt.bootstrap_b;
  std::vector<std::map<Method, double>> points(static_cast<std::size_t>(B));
  std::vector<char> ok(static_cast<std::size_t>(B), 0);

  const std::uint64_t stream_base =
      Rng::derive_seed(opt.seed, 0xb5ULL + (spec.qr_true ? 1 : 0) + (spec.pm_true ? 2 : 0));
  parallel_for(static_cast<std::size_t>(B), opt.bootstrap_jobs, [&](std::size_t b) {
    try {
      const CombinedSample rep =
          rao_wu_replicate(s, stream_base, static_cast<Eigen::Index>(b), opt.cluster_bootstrap);
      FreqContext ctx(rep, opt, spec);
      for (Method m : methods)
        points[b][m] = point_from_context(rep, opt, ctx, m, spec);
      ok[b] = 1;
    } catch (const Error&) {
      // replicate dropped; counted below
    }
  });

  Eigen::Index n_ok = 0;
  for (char c : ok) n_ok += c;
  if (static_cast<double>(B - n_ok) > 0.05 * static_cast<double>(B))
    fail(Err::EstimatorFailed, std::to_string(B - n_ok) + "/" + std::to_string(B) +
                                   " bootstrap replicates failed");

  std::map<Method, double> out;
  for (Method m : methods) {
    double mean = 0.0;
    for (std::size_t b = 0; b < points.size(); ++b)
      if (ok[b]) mean += points[b][m];
    mean /= static_cast<double>(n_ok);
    double var = 0.0;
    for (std::size_t b = 0; b < points.size(); ++b)
      if (ok[b]) var += (points[b][m] - mean) * (points[b][m] - mean);
    out[m] = var / static_cast<double>(n_ok);
  }
  return out;
}

double point_from_context(const CombinedSample& s, const PipelineOptions& opt, FreqContext& ctx,
                          Method method, const ModelSpec& spec) {
  switch (method) {
    case Method::UnweightedB:
      return s.y_b().mean();
    case Method::PAPW: {
      const PseudoInclusion pib = papw(s, ctx.p_papw_b().transpose(), /*strict=*/false);
      return hajek_mean(s.y_b(), inv(pib.single()));
    }
    case Method::PAPP: {
      const PseudoInclusion pib =
          papp(s, ctx.pir_hat_b().transpose(), ctx.p_papp_b().transpose(), /*strict=*/false);
      return hajek_mean(s.y_b(), inv(pib.single()));
    }
    case Method::IPSW:
      return hajek_mean(s.y_b(), inv(ctx.pi_ipsw_b()));
    case Method::PM: {
      const Vector m_hat = ctx.m_hat_all();
      const auto idx_r = s.indices_r();
      Vector yhat_r(s.n_r);
      for (Eigen::Index j = 0; j < s.n_r; ++j)
        yhat_r[j] = m_hat[idx_r[static_cast<std::size_t>(j)]];
      return pm_estimate(s, yhat_r).point;
    }
    case Method::AipwPapw: {
      if (opt.joint_dr && ctx.xqr_papw_all().cols() == ctx.xpm_all().cols())
        return aipw_joint(s, ctx.xqr_papw_all(), ctx.xpm_all(), opt.normalization).report.point;
      const PseudoInclusion pib = papw(s, ctx.p_papw_b().transpose(), /*strict=*/false);
      return plugin_dr_point(s, ctx, pib.single(), opt);
    }
    case Method::AipwPapp: {
      const PseudoInclusion pib =
          papp(s, ctx.pir_hat_b().transpose(), ctx.p_papp_b().transpose(), /*strict=*/false);
      return plugin_dr_point(s, ctx, pib.single(), opt);
    }
    case Method::AipwIpsw:
      return plugin_dr_point(s, ctx, ctx.pi_ipsw_b(), opt);
  }
  fail(Err::ConfigInvalid, "unknown method");
}

double plugin_dr_point(const CombinedSample& s, FreqContext& ctx, const Vector& pib,
                       const PipelineOptions& opt) {
  const Vector m_hat = ctx.m_hat_all();
  const auto idx_b = s.indices_b();
  const auto idx_r = s.indices_r();
  Vector m_b(s.n_b), m_r(s.n_r);
  for (Eigen::Index i = 0; i < s.n_b; ++i) m_b[i] = m_hat[idx_b[static_cast<std::size_t>(i)]];
  for (Eigen::Index j = 0; j < s.n_r; ++j) m_r[j] = m_hat[idx_r[static_cast<std::size_t>(j)]];
  return aipw_plugin(s, pib, m_b, m_r, opt.normalization).point;
}

CellResult evaluate_frequentist(const CombinedSample& s, const PipelineOptions& opt,
                                FreqContext& ctx, Method method, const ModelSpec& spec) {
  CellResult cell;
  cell.point = point_from_context(s, opt, ctx, method, spec);

  if (opt.bootstrap_b > 0) {
    // Variance injected by the caller (shared bootstrap pass).
    cell.ok = true;
    return cell;
  }

  switch (method) {
    case Method::UnweightedB: {
      const Vector yb = s.y_b();
      cell.variance = yb.size() > 1 ? sample_variance(yb) / static_cast<double>(yb.size()) : 0.0;
      break;
    }
    case Method::PAPW: {
      const PseudoInclusion pib = papw(s, ctx.p_papw_b().transpose(), /*strict=*/false);
      cell.variance =
          sandwich_papw(s, pib.single(), ctx.p_papw_all(), ctx.xqr_papw_all(), cell.point)
              .variance;
      break;
    }
    case Method::PAPP: {
      const PseudoInclusion pib =
          papp(s, ctx.pir_hat_b().transpose(), ctx.p_papp_b().transpose(), /*strict=*/false);
      cell.variance = plugin_hajek_variance(s.y_b(), pib.single(), cell.point);
      break;
    }
    case Method::IPSW: {
      const Matrix xb = working_design(opt.sim_id, ModelRole::QrPapp, spec.qr_true,
                                       ctx.rows().b, opt.fk);
      const Matrix xr = working_design(opt.sim_id, ModelRole::QrPapp, spec.qr_true,
                                       ctx.rows().r, opt.fk);
      const Vector pi_r_fit = predict(ctx.pmle(), xr, PredictScale::Mean);
      Vector wr(s.n_r);
      const Vector pir = s.pi_r_r();
      for (Eigen::Index j = 0; j < s.n_r; ++j) wr[j] = 1.0 / pir[j];
      cell.variance =
          ipsw_sandwich_variance(s, xb, xr, ctx.pi_ipsw_b(), pi_r_fit, wr, cell.point);
      break;
    }
    case Method::PM: {
      // Design variance of the Hajek PM mean under Poisson sampling of S_R,
      // plus the outcome-model coefficient uncertainty mapped through the
      // weighted mean gradient (the two samples are independent).
      const Vector m_hat = ctx.m_hat_all();
      const auto idx_r = s.indices_r();
      Vector yhat_r(s.n_r);
      for (Eigen::Index j = 0; j < s.n_r; ++j)
        yhat_r[j] = m_hat[idx_r[static_cast<std::size_t>(j)]];
      const Vector pir = s.pi_r_r();
      cell.variance = plugin_hajek_variance(yhat_r, pir, cell.point);

      const GlmFit& fit = ctx.outcome_fit();
      if (fit.vcov) {
        const Matrix xpm_r = working_design(opt.sim_id, ModelRole::Pm, spec.pm_true,
                                            ctx.rows().r, opt.fk);
        Vector grad = Vector::Zero(xpm_r.cols());
        double wsum = 0.0;
        for (Eigen::Index j = 0; j < s.n_r; ++j) {
          const double w = 1.0 / pir[j];
          const double link = s.outcome == OutcomeKind::Binary
                                  ? yhat_r[j] * (1.0 - yhat_r[j])
                                  : 1.0;
          grad += w * link * xpm_r.row(j).transpose();
          wsum += w;
        }
        grad /= wsum;
        cell.variance += grad.dot(*fit.vcov * grad);
      }
      break;
    }
    case Method::AipwPapw: {
      if (opt.joint_dr && ctx.xqr_papw_all().cols() == ctx.xpm_all().cols()) {
        const JointAipwResult joint =
            aipw_joint(s, ctx.xqr_papw_all(), ctx.xpm_all(), opt.normalization);
        cell.point = joint.report.point;
        Vector pib(s.n_b);
        const Vector pir_b = s.pi_r_b();
        const auto idx_b = s.indices_b();
        for (Eigen::Index i = 0; i < s.n_b; ++i) {
          const double p = joint.p_all[idx_b[static_cast<std::size_t>(i)]];
          pib[i] = pir_b[i] * p / (1.0 - p);
        }
        cell.variance =
            chen_dr_variance(s, pib, joint.m_hat_all, ctx.sigma2_all(joint.m_hat_all)).variance;
      } else {
        const PseudoInclusion pib = papw(s, ctx.p_papw_b().transpose(), /*strict=*/false);
        const Vector m_hat = ctx.m_hat_all();
        cell.variance = chen_dr_variance(s, pib.single(), m_hat, ctx.sigma2_all(m_hat)).variance;
      }
      break;
    }
    case Method::AipwPapp: {
      const PseudoInclusion pib =
          papp(s, ctx.pir_hat_b().transpose(), ctx.p_papp_b().transpose(), /*strict=*/false);
      const Vector m_hat = ctx.m_hat_all();
      cell.variance = chen_dr_variance(s, pib.single(), m_hat, ctx.sigma2_all(m_hat)).variance;
      break;
    }
    case Method::AipwIpsw: {
      const Vector m_hat = ctx.m_hat_all();
      cell.variance = chen_dr_variance(s, ctx.pi_ipsw_b(), m_hat, ctx.sigma2_all(m_hat)).variance;
      break;
    }
  }
  cell.ok = true;
  return cell;
}

}  // namespace

double frequentist_point(const CombinedSample& sample, const PipelineOptions& options,
                         Method method, const ModelSpec& spec) {
  FreqContext ctx(sample, options, spec);
  return point_from_context(sample, options, ctx, method, spec);
}

CellMap run_pipeline(const CombinedSample& sample, const PipelineOptions& options,
                     const std::vector<Method>& methods, const std::vector<ModelSpec>& specs) {
  CellMap cells;
  for (const ModelSpec& spec : specs) {
    std::vector<Method> todo;
    for (Method m : methods) {
      const std::string key = cell_key(m, spec);
      if (!cells.count(key)) {
        cells[key];  // reserve
        todo.push_back(m);
      }
    }
    if (todo.empty()) continue;

    if (options.inference == InferenceMode::Frequentist) {
      FreqContext ctx(sample, options, spec);
      for (Method m : todo) {
        auto& cell = cells[cell_key(m, spec)];
        try {
          cell = evaluate_frequentist(sample, options, ctx, m, spec);
        } catch (const Error& e) {
          cell.ok = false;
          cell.error = e.what();
        }
      }
      if (options.bootstrap_b > 0) {
        std::vector<Method> boot_methods;
        for (Method m : todo)
          if (cells[cell_key(m, spec)].ok) boot_methods.push_back(m);
        if (!boot_methods.empty()) {
          try {
            const auto vars = bootstrap_variances(sample, options, boot_methods, spec);
            for (Method m : boot_methods) cells[cell_key(m, spec)].variance = vars.at(m);
          } catch (const Error& e) {
            for (Method m : boot_methods) {
              auto& cell = cells[cell_key(m, spec)];
              cell.ok = false;
              cell.error = e.what();
            }
          }
        }
      }
    } else {
      BayesContext ctx(sample, options, spec);
      for (Method m : todo) {
        auto& cell = cells[cell_key(m, spec)];
        try {
          cell = evaluate_bayesian(sample, options, ctx, m, spec);
        } catch (const Error& e) {
          cell.ok = false;
          cell.error = e.what();
        }
      }
    }
  }
  return cells;
}

}  // namespace npfuse
