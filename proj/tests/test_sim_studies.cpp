#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "npfuse/mathx.hpp"
#include "npfuse/sim_studies.hpp"

using namespace npfuse;

TEST_CASE("study one hits its analytic mean and construction targets") {
  const Eigen::Index n = 1000000;
  const PopulationTruth pop = gen_sim1(n, 0.5, 12345);

  // E[y] = 2 + 0.5 + 1.15 + 1.33 + 4.298 = 9.278
  CHECK(std::abs(pop.true_mean - 9.278) < 0.05);

  Vector lin(n);
  for (Eigen::Index i = 0; i < n; ++i) lin[i] = pop.x.row(i).sum();
  CHECK(std::abs(pearson_corr(pop.y, lin) - 0.5) < 0.01);

  const double sum_b = pop.pi_b.sum();
  CHECK(sum_b / 1000.0 > 0.999);
  CHECK(sum_b / 1000.0 < 1.001);
  CHECK(std::abs(pop.pi_r.sum() - 100.0) < 0.1);
  CHECK(pop.pi_r.maxCoeff() / pop.pi_r.minCoeff() == doctest::Approx(50.0).epsilon(1e-3));
  CHECK(pop.pi_b.minCoeff() > 0.0);
  CHECK(pop.pi_b.maxCoeff() < 1.0);
}

TEST_CASE("study one is reproducible from its seed") {
  const PopulationTruth a = gen_sim1(10000, 0.5, 77);
  const PopulationTruth b = gen_sim1(10000, 0.5, 77);
  CHECK(a.y == b.y);
  CHECK(a.pi_b == b.pi_b);
  const PopulationTruth c = gen_sim1(10000, 0.5, 78);
  CHECK(a.y != c.y);
}

TEST_CASE("study two construction targets") {
  const Eigen::Index n = 1000000;

  const PopulationTruth indep = gen_sim2(n, 0.0, Sim2Fk::SIN, 4);
  CHECK(std::abs(pearson_corr(indep.x.col(0), indep.d.col(0))) < 0.01);

  const PopulationTruth sqr = gen_sim2(n, 0.2, Sim2Fk::SQR, 5);
  // E[2 f3(x)] = 2 E[x^2] / 3 = 2/3 for standard-normal x.
  double mean_f = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    mean_f += 2.0 * sqr.x(i, 0) * sqr.x(i, 0) / 3.0;
  mean_f /= static_cast<double>(n);
  CHECK(std::abs(mean_f - 2.0 / 3.0) < 0.01);

  Vector m(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = sqr.x(i, 0), d = sqr.d(i, 0);
    m[i] = 2.0 * x * x / 3.0 - d * d + 0.5 * x * d;
  }
  CHECK(std::abs(pearson_corr(sqr.y, m) - 0.5) < 0.01);

  CHECK(std::abs(sqr.pi_r.sum() - 100.0) / 100.0 < 0.001);
  CHECK(std::abs(sqr.pi_b.sum() - 1000.0) / 1000.0 < 0.001);
}

TEST_CASE("study three structure and targets") {
  const Eigen::Index a = 400, n_alpha = 100;
  const PopulationTruth pop = gen_sim3(a, n_alpha, 0.8, 31, 40, 40);
  CHECK(pop.n_units == a * n_alpha);
  CHECK(pop.n_clusters == a);
  CHECK(pop.y_bin.size() == pop.n_units);

  // x2 is the positive-part indicator of a standard normal.
  CHECK(std::abs(pop.x.col(1).mean() - 0.5) < 0.06);

  // Random-intercept ICC: var(u) / (var(u) + within), within variance 1.
  double within = 0.0;
  for (Eigen::Index c = 0; c < a; ++c) {
    const Eigen::Index base = c * n_alpha;
    double mu = 0.0;
    for (Eigen::Index i = 0; i < n_alpha; ++i) mu += pop.y[base + i];
    mu /= static_cast<double>(n_alpha);
    for (Eigen::Index i = 0; i < n_alpha; ++i)
      within += (pop.y[base + i] - mu) * (pop.y[base + i] - mu);
  }
  within /= static_cast<double>(a * (n_alpha - 1));
  const double var_u = sample_variance(pop.u_cluster);
  const double icc = var_u / (var_u + within);
  CHECK(icc > 0.15);
  CHECK(icc < 0.25);

  CHECK(std::abs(pop.pi_r_psu.sum() - 40.0) < 0.05);
  CHECK(std::abs(pop.pi_b_psu.sum() - 40.0) < 0.05);
  // Unit-level probabilities fold in the within-PSU subsampling fractions.
  CHECK(pop.pi_r[0] ==
        doctest::Approx(pop.pi_r_psu[0] / static_cast<double>(n_alpha)).epsilon(1e-12));
  CHECK(pop.pi_b[0] ==
        doctest::Approx(pop.pi_b_psu[0] * 50.0 / static_cast<double>(n_alpha)).epsilon(1e-12));
}

TEST_CASE("poisson sampling census and binomial bounds") {
  PopulationTruth pop = gen_sim1(100000, 0.5, 9);
  pop.pi_b.setOnes();
  const auto census = poisson_sample(pop, PiField::B, 1);
  CHECK(static_cast<Eigen::Index>(census.size()) == pop.n_units);

  pop.pi_b.setConstant(0.5);
  const auto half = poisson_sample(pop, PiField::B, 2);
  const double n = static_cast<double>(pop.n_units);
  const double slack = 4.0 * std::sqrt(n * 0.25);
  CHECK(std::abs(static_cast<double>(half.size()) - 0.5 * n) < slack);

  const auto again = poisson_sample(pop, PiField::B, 2);
  REQUIRE(again.size() == half.size());
  bool same = true;
  for (std::size_t i = 0; i < half.size(); ++i) same = same && half[i].id == again[i].id;
  CHECK(same);
}

TEST_CASE("poisson sample rows satisfy the record contract") {
  const PopulationTruth pop = gen_sim1(50000, 0.5, 10);
  const auto rows_r = poisson_sample(pop, PiField::R, 3);
  const auto rows_b = poisson_sample(pop, PiField::B, 4, /*pir_known_b=*/false);
  for (const auto& r : rows_r) {
    CHECK(r.z == 0);
    CHECK(r.pi_r.has_value());
    CHECK_FALSE(r.y.has_value());
  }
  for (const auto& r : rows_b) {
    CHECK(r.z == 1);
    CHECK(r.y.has_value());
    CHECK_FALSE(r.pi_r.has_value());
  }
  const CombinedSample s = build_combined(rows_r, rows_b);
  CHECK(s.n_r == static_cast<Eigen::Index>(rows_r.size()));
}

TEST_CASE("two-stage sampling respects per-cluster sizes") {
  const PopulationTruth pop = gen_sim3(50, 20, 0.5, 13, 10, 10);

  const auto whole = two_stage_cluster_sample(pop, PiField::R, 20, 5);
  std::map<std::string, int> counts;
  for (const auto& r : whole) counts[*r.cluster_id]++;
  for (const auto& [cid, c] : counts) CHECK(c == 20);

  const auto singles = two_stage_cluster_sample(pop, PiField::R, 1, 6);
  counts.clear();
  for (const auto& r : singles) counts[*r.cluster_id]++;
  for (const auto& [cid, c] : counts) CHECK(c == 1);

  try {
    two_stage_cluster_sample(pop, PiField::R, 21, 7);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Err::ClusterTooSmall);
  }
}

TEST_CASE("working designs expose the paper's true and misspecified covariate sets") {
  const PopulationTruth pop = gen_sim1(2000, 0.5, 3);
  const auto rows = poisson_sample(pop, PiField::B, 4);
  REQUIRE(rows.size() >= 1);

  CHECK(working_design(1, ModelRole::QrPapw, true, rows).cols() == 5);
  CHECK(working_design(1, ModelRole::QrPapw, false, rows).cols() == 4);
  CHECK(working_design(1, ModelRole::Pm, true, rows).cols() == 5);
  CHECK(working_design(1, ModelRole::Pm, false, rows).cols() == 4);

  const PopulationTruth pop2 = gen_sim2(2000, 0.2, Sim2Fk::EXP, 3);
  const auto rows2 = poisson_sample(pop2, PiField::B, 4);
  // True QR on x*: [f_k(x), d^2]; true PM: [f_k(x), d^2, x d].
  const Matrix qrm = working_design(2, ModelRole::QrPapw, true, rows2, Sim2Fk::EXP);
  CHECK(qrm.cols() == 3);
  CHECK(qrm(0, 1) == doctest::Approx(std::exp(0.5 * rows2[0].x[0])));
  CHECK(qrm(0, 2) == doctest::Approx((*rows2[0].d)[0] * (*rows2[0].d)[0]));
  CHECK(working_design(2, ModelRole::Pm, true, rows2, Sim2Fk::EXP).cols() == 4);
  CHECK(working_design(2, ModelRole::Pm, false, rows2, Sim2Fk::EXP).cols() == 3);

  const PopulationTruth pop3 = gen_sim3(50, 20, 0.5, 13, 10, 10);
  const auto rows3 = two_stage_cluster_sample(pop3, PiField::B, 5, 8);
  CHECK(working_design(3, ModelRole::Pm, true, rows3).cols() == 6);
  CHECK(working_design(3, ModelRole::QrPapp, true, rows3).cols() == 5);
  CHECK(working_design(3, ModelRole::QrPapp, false, rows3).cols() == 3);
  CHECK(bart_design(ModelRole::Pm, rows3).cols() == 3);
  CHECK(bart_design(ModelRole::QrPapp, rows3).cols() == 2);
}
