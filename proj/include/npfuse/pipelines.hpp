#pragma once

#include <map>
#include <string>
#include <vector>

#include "npfuse/bart.hpp"
#include "npfuse/estimators.hpp"
#include "npfuse/sim_studies.hpp"
#include "npfuse/variance.hpp"

namespace npfuse {

enum class Method {
  UnweightedB,
  PAPW,
  PAPP,
  IPSW,
  PM,
  AipwPapw,
  AipwPapp,
  AipwIpsw,
};

std::string method_name(Method m);

enum class Engine { GLM, BART };
enum class InferenceMode { Frequentist, Bayesian };

struct ModelSpec {
  bool qr_true = true;
  bool pm_true = true;
};

// Spec label as printed in tables: both flags for DR methods, the relevant
// single flag for one-model methods, "-" for model-free rows.
std::string spec_label(Method m, const ModelSpec& spec);

struct PipelineOptions {
  int sim_id = 1;
  Sim2Fk fk = Sim2Fk::SIN;
  Engine engine = Engine::GLM;
  InferenceMode inference = InferenceMode::Frequentist;
  Normalization normalization = Normalization::Hajek;
  bool joint_dr = true;  // frequentist DR via the stacked solve when dims allow

  Eigen::Index m_sub = 200;          // posterior subsample per method
  Eigen::Index mcmc_draws = 1000;    // kept GLM MCMC draws before subsampling
  Eigen::Index mcmc_burn_in = 1000;
  Eigen::Index bart_draws = 200;     // kept BART states (already the subsample)
  Eigen::Index bart_burn_in = 1000;
  Eigen::Index bart_thin = 5;
  int bart_m_continuous = 200;
  int bart_m_probit = 50;

  Eigen::Index bootstrap_b = 0;  // frequentist variance via bootstrap when > 0
  bool cluster_bootstrap = false;
  int bootstrap_jobs = 1;
  bool within_by_cluster = false;

  std::uint64_t seed = 0;
};

struct CellResult {
  double point = 0.0;
  double variance = 0.0;
  bool ok = false;
  std::string error;
};

using CellMap = std::map<std::string, CellResult>;

std::string cell_key(Method m, const ModelSpec& spec);

// Evaluates every (method, spec) pair on one combined sample. Failures are
// captured per cell, never thrown.
CellMap run_pipeline(const CombinedSample& sample, const PipelineOptions& options,
                     const std::vector<Method>& methods, const std::vector<ModelSpec>& specs);

// Point estimate only: used by the bootstrap replicate callable.
double frequentist_point(const CombinedSample& sample, const PipelineOptions& options,
                         Method method, const ModelSpec& spec);

}  // namespace npfuse
