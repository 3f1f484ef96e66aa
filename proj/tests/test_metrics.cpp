#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "npfuse/metrics.hpp"
#include "npfuse/report.hpp"

using namespace npfuse;

TEST_CASE("metric formulas on hand inputs") {
  Vector exact = Vector::Constant(3, 4.0);
  MetricsSummary s = compute_metrics(exact, Vector::Zero(3), 4.0);
  CHECK(s.rbias_pct == doctest::Approx(0.0));
  CHECK(s.rmse_pct == doctest::Approx(0.0));

  Vector points(2), vars(2);
  points << 1.1, 0.9;
  vars << 0.0, 0.0;
  s = compute_metrics(points, vars, 1.0);
  CHECK(s.rbias_pct == doctest::Approx(0.0).epsilon(1e-10));
  CHECK(s.rmse_pct == doctest::Approx(10.0));
  CHECK(s.crci_pct == doctest::Approx(0.0));
  CHECK(s.k_effective == 2);

  try {
    compute_metrics(points, vars, 0.0);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Err::ZeroTruth);
  }
  Vector vshort = Vector::Zero(1);
  CHECK_THROWS_AS(compute_metrics(points, vshort, 1.0), Error);
}

TEST_CASE("coverage uses the z-interval cutoff") {
  Vector points(2), vars(2);
  points << 1.1, 0.9;
  // se = 0.0511 covers a 0.1 deviation; se = 0.05 does not.
  vars << 0.0511 * 0.0511, 0.05 * 0.05;
  const MetricsSummary s = compute_metrics(points, vars, 1.0);
  CHECK(s.crci_pct == doctest::Approx(50.0));
}

namespace {

ScenarioConfig tiny_config() {
  ScenarioConfig cfg;
  cfg.sim_id = 1;
  cfg.rho = 0.5;
  cfg.population_n = 50000;
  cfg.n_r = 100;
  cfg.n_b = 300;
  cfg.methods = {Method::UnweightedB, Method::PAPW, Method::PM, Method::AipwPapw};
  cfg.specs = {{true, true}, {false, false}};
  cfg.k_reps = 6;
  cfg.seed = 71;
  return cfg;
}

}  // namespace

TEST_CASE("replication tables are parallelism invariant") {
  ScenarioConfig cfg = tiny_config();
  cfg.jobs = 1;
  const auto rows1 = run_replications(cfg);
  cfg.jobs = 4;
  const auto rows4 = run_replications(cfg);
  cfg.jobs = 8;
  const auto rows8 = run_replications(cfg);
  REQUIRE(rows1.size() == rows4.size());
  REQUIRE(rows1.size() == rows8.size());
  const std::string csv1 = metrics_to_csv(rows1);
  CHECK(csv1 == metrics_to_csv(rows4));
  CHECK(csv1 == metrics_to_csv(rows8));
}

TEST_CASE("a single replication degenerates cleanly") {
  ScenarioConfig cfg = tiny_config();
  cfg.k_reps = 1;
  const auto rows = run_replications(cfg);
  for (const auto& r : rows) {
    REQUIRE(r.ok);
    CHECK(r.summary.k_effective == 1);
    CHECK(r.summary.rmse_pct == doctest::Approx(std::abs(r.summary.rbias_pct)).epsilon(1e-9));
    CHECK((r.summary.crci_pct == 0.0 || r.summary.crci_pct == 100.0));
  }
}

TEST_CASE("rmse dominates rbias in every emitted row") {
  ScenarioConfig cfg = tiny_config();
  cfg.k_reps = 10;
  const auto rows = run_replications(cfg);
  for (const auto& r : rows) {
    REQUIRE(r.ok);
    CHECK(r.summary.rmse_pct * r.summary.rmse_pct -
              r.summary.rbias_pct * r.summary.rbias_pct >=
          -1e-9);
  }
}

TEST_CASE("csv table shape follows the interface contract") {
  ScenarioConfig cfg = tiny_config();
  cfg.k_reps = 2;
  const auto rows = run_replications(cfg);
  const std::string csv = metrics_to_csv(rows);
  CHECK(csv.rfind("method,spec,rbias,rmse,crci,rse,k_eff\n", 0) == 0);
  CHECK(csv.find("GLM-AIPW-PAPW,TT,") != std::string::npos);
  CHECK(csv.find("GLM-AIPW-PAPW,FF,") != std::string::npos);
  CHECK(csv.find("UW-B,-,") != std::string::npos);
  CHECK(csv.find("FW-B,-,") != std::string::npos);

  const std::string json = metrics_to_json(rows);
  CHECK(json.find("\"schema_version\": 1") != std::string::npos);
}

TEST_CASE("bayesian study-one table runs end to end at toy size") {
  ScenarioConfig cfg;
  cfg.sim_id = 1;
  cfg.rho = 0.5;
  cfg.population_n = 100000;
  cfg.n_r = 100;
  cfg.n_b = 200;
  cfg.inference = InferenceMode::Bayesian;
  cfg.methods = {Method::PAPP, Method::AipwPapw};
  cfg.specs = {{true, true}};
  cfg.m_sub = 50;
  cfg.mcmc_draws = 200;
  cfg.mcmc_burn_in = 200;
  cfg.k_reps = 2;
  cfg.seed = 5;
  cfg.include_population_rows = false;
  const auto rows = run_replications(cfg);
  REQUIRE(rows.size() == 2);
  for (const auto& r : rows) {
    REQUIRE(r.ok);
    CHECK(std::isfinite(r.summary.rbias_pct));
    CHECK(std::abs(r.summary.rbias_pct) < 50.0);
  }
}
