#pragma once

#include <string>
#include <vector>

#include "npfuse/pipelines.hpp"

namespace npfuse {

struct MetricsSummary {
  Eigen::Index k_effective = 0;
  double rbias_pct = 0.0;
  double rmse_pct = 0.0;
  double crci_pct = 0.0;
  double rse = 0.0;
  double truth = 0.0;
};

// Repeated-sampling metrics against a fixed truth:
//   rBias = 100 * mean(point - truth) / truth
//   rMSE  = 100 * sqrt(mean((point - truth)^2)) / truth
//   crCI  = 100 * mean(1{|point - truth| < z_{0.975} * sqrt(var)})
//   rSE   = mean(sqrt(var)) / sd(points)   (K-1 denominator)
MetricsSummary compute_metrics(const Vector& points, const Vector& variances, double truth);

struct ScenarioConfig {
  int sim_id = 1;
  double rho = 0.5;
  Sim2Fk fk = Sim2Fk::SIN;

  Eigen::Index population_n = 100000;  // sims 1-2
  Eigen::Index clusters_a = 200;       // sim 3
  Eigen::Index n_alpha = 1000;
  double n_r = 100, n_b = 1000;        // expected unit counts (sims 1-2)
  double n_r_psu = 100, n_b_psu = 100; // expected PSU counts (sim 3)

  Engine engine = Engine::GLM;
  InferenceMode inference = InferenceMode::Frequentist;
  std::vector<Method> methods;
  std::vector<ModelSpec> specs{{true, true}};
  bool use_binary_outcome = false;
  bool include_population_rows = true;

  Eigen::Index m_sub = 200;
  Eigen::Index mcmc_draws = 1000, mcmc_burn_in = 1000;
  Eigen::Index bart_draws = 200, bart_burn_in = 1000, bart_thin = 5;
  int bart_m_continuous = 200, bart_m_probit = 50;
  Eigen::Index bootstrap_b = 0;
  bool cluster_bootstrap = false;
  bool joint_dr = true;
  Normalization normalization = Normalization::Hajek;

  Eigen::Index k_reps = 100;
  std::uint64_t seed = 1;
  int jobs = 1;
  bool fixed_population = false;
};

struct MetricsRow {
  std::string method;
  std::string spec;
  MetricsSummary summary;
  bool ok = false;
  Eigen::Index failures = 0;
  std::string first_error;
};

// Runs K replications of (generate, sample, estimate, variance) and
// aggregates the four metrics per method/spec cell. Replication k draws all
// its randomness from streams derived from (seed, k); cells with more than
// 10% failed replications are marked failed.
std::vector<MetricsRow> run_replications(const ScenarioConfig& config);

}  // namespace npfuse
