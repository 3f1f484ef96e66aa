// Numerical-correctness suite: analytic scores, estimating-equation roots,
// algebraic identities, hand oracles, and the tree-move acceptance
// decomposition against a brute-force enumeration.

#include <cstdarg>
#include <cmath>

#include "../support/bart_oracle.hpp"
#include "acceptance.hpp"
#include "npfuse/estimators.hpp"
#include "npfuse/mathx.hpp"
#include "npfuse/pseudo_weights.hpp"
#include "npfuse/rng.hpp"
#include "npfuse/sim_studies.hpp"
#include "npfuse/variance.hpp"

using namespace npfuse;

namespace {

double score_fd_worst(Rng& rng) {
  const int n = 50;
  Matrix x(n, 3);
  Vector yb(n), yc(n), pb(n);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = 1.0;
    x(i, 1) = rng.normal();
    x(i, 2) = rng.uniform(-1.0, 1.0);
    yb[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    yc[i] = rng.normal(1.0, 2.0);
    pb[i] = rng.uniform(0.05, 0.95);
  }
  const double h = 1e-6;
  double worst = 0.0;
  auto probe = [&](Family fam, const Vector& resp, Eigen::Index dim) {
    for (int trial = 0; trial < 10; ++trial) {
      Vector params(dim);
      for (Eigen::Index j = 0; j < dim; ++j) params[j] = rng.uniform(-0.5, 0.5);
      const Vector score = glm_score(fam, x, resp, params);
      for (Eigen::Index j = 0; j < dim; ++j) {
        Vector up = params, dn = params;
        up[j] += h;
        dn[j] -= h;
        const double fd =
            (glm_log_likelihood(fam, x, resp, up) - glm_log_likelihood(fam, x, resp, dn)) /
            (2.0 * h);
        worst = std::max(worst, std::abs(score[j] - fd) / std::max(1.0, std::abs(fd)));
      }
    }
  };
  probe(Family::Logistic, yb, 3);
  probe(Family::Linear, yc, 4);
  probe(Family::Beta, pb, 4);
  return worst;
}

}  // namespace

int main() {
  Acceptance acc;
  Rng rng(20260811);

  {
    const double worst = score_fd_worst(rng);
    acc.check(worst < 1e-4, "score vs finite differences (3 families, 10 points each)",
              fmt("worst relative error %.3g (< 1e-4)", worst));
  }

  {
    const PopulationTruth pop = gen_sim1(100000, 0.5, 4711);
    const auto rows_r = poisson_sample(pop, PiField::R, 1);
    const auto rows_b = poisson_sample(pop, PiField::B, 2);
    const CombinedSample s = build_combined(rows_r, rows_b);
    const GlmFit fit = solve_pmle(s, CovariateSet::X);
    const double resid = pmle_residual(s, CovariateSet::X, fit.coefficients)
                             .cwiseAbs()
                             .maxCoeff();
    const double bound = 1e-8 * static_cast<double>(s.n_b);
    acc.check(resid <= bound, "PMLE root residual",
              fmt("max|U(beta-hat)| = %.3g (<= 1e-8 * n_B = %.3g)", resid, bound));
  }

  {
    // Combined-sample rearrangement identity on synthetic full data.
    Rng lrng(55);
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      const int n_b = 60, n_r = 25;
      std::vector<UnitRecord> ref, npb;
      Vector y_all(n_b + n_r);
      for (int i = 0; i < n_b; ++i) {
        UnitRecord r;
        r.id = "b" + std::to_string(i);
        r.x = Vector(0);
        r.pi_r = lrng.uniform(0.05, 0.5);
        r.y = lrng.normal(2.0, 1.0);
        r.z = 1;
        y_all[i] = *r.y;
        npb.push_back(r);
      }
      for (int i = 0; i < n_r; ++i) {
        UnitRecord r;
        r.id = "r" + std::to_string(i);
        r.x = Vector(0);
        r.pi_r = lrng.uniform(0.05, 0.5);
        r.y = lrng.normal(2.0, 1.0);
        r.z = 0;
        y_all[n_b + i] = *r.y;
        ref.push_back(r);
      }
      const CombinedSample s = build_combined(ref, npb, 500.0);
      Vector p(s.size()), m_hat(s.size());
      for (Eigen::Index i = 0; i < s.size(); ++i) {
        p[i] = lrng.uniform(0.2, 0.9);
        m_hat[i] = lrng.normal(2.0, 1.0);
      }
      Vector pib(s.n_b), m_b(s.n_b), m_r(s.n_r);
      for (Eigen::Index i = 0; i < s.n_b; ++i) {
        pib[i] = *s.records[static_cast<std::size_t>(i)].pi_r * p[i] / (1.0 - p[i]);
        m_b[i] = m_hat[i];
      }
      for (Eigen::Index j = 0; j < s.n_r; ++j) m_r[j] = m_hat[s.n_b + j];
      const double route_a = aipw_plugin(s, pib, m_b, m_r, Normalization::KnownN).point;
      double ht = 0.0, corr = 0.0;
      for (Eigen::Index i = 0; i < s.size(); ++i) {
        const auto& r = s.records[static_cast<std::size_t>(i)];
        const double w = 1.0 / *r.pi_r;
        if (r.z == 0) ht += w * y_all[i];
        corr += w * (static_cast<double>(r.z) / p[i] - 1.0) * (y_all[i] - m_hat[i]);
      }
      const double route_b = (ht + corr) / 500.0;
      worst = std::max(worst, std::abs(route_a - route_b));
    }
    acc.check(worst <= 1e-10, "combined-sample DR rearrangement identity",
              fmt("worst |route A - route B| = %.3g (<= 1e-10)", worst));
  }

  {
    std::vector<UnitRecord> ref, npb;
    for (int i = 0; i < 2; ++i) {
      UnitRecord r;
      r.id = "r" + std::to_string(i);
      r.x = Vector(0);
      r.pi_r = 0.5;
      r.z = 0;
      ref.push_back(r);
    }
    UnitRecord b1, b2;
    b1.id = "b1";
    b1.x = Vector(0);
    b1.y = 1.0;
    b1.z = 1;
    b2.id = "b2";
    b2.x = Vector(0);
    b2.y = 3.0;
    b2.z = 1;
    npb = {b1, b2};
    const CombinedSample s = build_combined(ref, npb, 8.0);
    Vector pib(2), m_b(2), m_r(2);
    pib << 0.5, 0.25;
    m_b << 1.0, 2.0;
    m_r << 2.0, 2.0;
    const double point = aipw_plugin(s, pib, m_b, m_r, Normalization::KnownN).point;
    acc.check(std::abs(point - 1.5) <= 1e-10, "hand-evaluated four-unit AIPW toy",
              fmt("point = %.12f (|point - 1.5| <= 1e-10)", point));
  }

  {
    // Within-imputation approximation against an independent spreadsheet-style
    // evaluation on a 3 + 3 sample.
    std::vector<UnitRecord> ref, npb;
    const double pir_vals[3] = {0.2, 0.5, 0.25};
    const double yb_vals[3] = {1.0, 4.0, 2.5};
    for (int i = 0; i < 3; ++i) {
      UnitRecord r;
      r.id = "r" + std::to_string(i);
      r.x = Vector(0);
      r.pi_r = pir_vals[i];
      r.z = 0;
      ref.push_back(r);
      UnitRecord b;
      b.id = "b" + std::to_string(i);
      b.x = Vector(0);
      b.y = yb_vals[i];
      b.pi_r = 0.3;
      b.z = 1;
      npb.push_back(b);
    }
    const CombinedSample s = build_combined(ref, npb);
    Vector yhat_r(3), pib(3);
    yhat_r << 1.5, 2.5, 3.5;
    pib << 0.2, 0.4, 0.35;

    const double ybar = (1.0 + 4.0 + 2.5) / 3.0;
    const double var_y = ((1.0 - ybar) * (1.0 - ybar) + (4.0 - ybar) * (4.0 - ybar) +
                          (2.5 - ybar) * (2.5 - ybar)) /
                         2.0;
    const double nb_hat = 1.0 / 0.2 + 1.0 / 0.4 + 1.0 / 0.35;
    const double term1 =
        var_y * (1.0 / (0.2 * 0.2) + 1.0 / (0.4 * 0.4) + 1.0 / (0.35 * 0.35)) /
        (nb_hat * nb_hat);
    const double w[3] = {5.0, 2.0, 4.0};
    const double wbar = (w[0] + w[1] + w[2]) / 3.0;
    const double var_w = ((w[0] - wbar) * (w[0] - wbar) + (w[1] - wbar) * (w[1] - wbar) +
                          (w[2] - wbar) * (w[2] - wbar)) /
                         2.0;
    const double nr_hat = w[0] + w[1] + w[2];
    const double t_r = 1.5 * w[0] + 2.5 * w[1] + 3.5 * w[2];
    const double ratio = t_r / nr_hat;
    const double bracket = (1.5 * 1.5 + 2.5 * 2.5 + 3.5 * 3.5) + 3.0 * ratio * ratio -
                           2.0 * ratio * (1.5 + 2.5 + 3.5);
    const double expected = term1 + var_w * bracket / (nr_hat * nr_hat);

    const double got = within_variance_approx(s, yhat_r, pib);
    acc.check(std::abs(got - expected) <= 1e-10, "within-imputation variance spreadsheet oracle",
              fmt("|got - expected| = %.3g (<= 1e-10)", std::abs(got - expected)));
  }

  {
    // Tree move acceptance decomposition on the six-point dataset against
    // quadrature-based enumeration of all single-split trees.
    Matrix x(6, 1);
    x << 1, 2, 3, 4, 5, 6;
    Vector resid(6);
    resid << 0.21, -0.04, 0.13, 0.33, 0.44, 0.58;
    const double sigma = 0.35;
    bart::BartConfig cfg;
    cfg.m = 1;
    const double sig_mu = bart::detail::sigma_mu(cfg, bart::BartOutput::Continuous);
    bart::Tree stump;
    std::vector<int> node_of(6, 0);
    std::vector<Vector> cutpoints{x.col(0)};

    double worst = 0.0;
    for (int ci = 0; ci < 5; ++ci) {
      const double cut = x(ci, 0);
      const auto got = bart::detail::evaluate_grow(stump, 0, 0, cut, x, resid, node_of, sigma,
                                                   cfg, sig_mu, cutpoints);
      const auto want = bart_oracle::grow_from_stump(x, resid, cut, sigma, cfg, sig_mu, 6);
      worst = std::max(worst, std::abs(got.log_prior_ratio - want.log_prior_ratio));
      worst = std::max(worst, std::abs(got.log_ml_ratio - want.log_ml_ratio));
      worst = std::max(worst, std::abs(got.log_proposal_ratio - want.log_proposal_ratio));
    }
    // Prune back from each single-split tree.
    for (int ci = 0; ci < 5; ++ci) {
      const double cut = x(ci, 0);
      bart::Tree split;
      split.nodes[0].var = 0;
      split.nodes[0].split = cut;
      split.nodes[0].left = 1;
      split.nodes[0].right = 2;
      bart::TreeNode child;
      child.parent = 0;
      child.depth = 1;
      split.nodes.push_back(child);
      split.nodes.push_back(child);
      std::vector<int> node_of2(6);
      for (int i = 0; i < 6; ++i) node_of2[static_cast<std::size_t>(i)] = x(i, 0) <= cut ? 1 : 2;
      const auto got = bart::detail::evaluate_prune(split, 0, x, resid, node_of2, sigma, cfg,
                                                    sig_mu, cutpoints);
      const auto want = bart_oracle::prune_to_stump(x, resid, cut, sigma, cfg, sig_mu, 6);
      worst = std::max(worst, std::abs(got.log_prior_ratio - want.log_prior_ratio));
      worst = std::max(worst, std::abs(got.log_ml_ratio - want.log_ml_ratio));
      worst = std::max(worst, std::abs(got.log_proposal_ratio - want.log_proposal_ratio));
    }
    acc.check(worst < 1e-6, "tree grow/prune acceptance vs single-split enumeration",
              fmt("worst component difference %.3g (< 1e-6, quadrature-limited)", worst));
  }

  return acc.exit_code();
}
