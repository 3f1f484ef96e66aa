#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "npfuse/data_model.hpp"

namespace npfuse {

enum class Sim2Fk { SIN, EXP, SQR };

inline const char* fk_name(Sim2Fk fk) {
  switch (fk) {
    case Sim2Fk::SIN: return "SIN";
    case Sim2Fk::EXP: return "EXP";
    case Sim2Fk::SQR: return "SQR";
  }
  return "?";
}

// A synthetic finite population with full truth: covariates, outcomes, both
// sets of inclusion probabilities, and cluster structure when present.
struct PopulationTruth {
  int sim_id = 1;
  double rho = 0.0;
  std::string scenario;
  Eigen::Index n_units = 0;

  Matrix x;  // analysis covariates per unit
  Matrix d;  // design covariates per unit (0 columns when none)
  Vector y;          // continuous outcome
  Vector y_bin;      // binary outcome (Sim III only; empty otherwise)
  Vector pi_r;       // unit-level reference inclusion probability
  Vector pi_b;       // unit-level non-probability inclusion probability

  // Cluster structure (Sim III).
  std::vector<Eigen::Index> cluster_of;
  Eigen::Index n_clusters = 0;
  Vector pi_r_psu, pi_b_psu;
  Vector u_cluster;
  Eigen::Index r_per_cluster = 1, b_per_cluster = 50;

  double true_mean = 0.0;
  double true_mean_bin = 0.0;
  double sigma = 0.0;
  double target_n_r = 0.0, target_n_b = 0.0;
};

PopulationTruth gen_sim1(Eigen::Index N, double rho, std::uint64_t seed, double n_r = 100,
                         double n_b = 1000);

PopulationTruth gen_sim2(Eigen::Index N, double rho, Sim2Fk fk, std::uint64_t seed,
                         double n_r = 100, double n_b = 1000);

// Clustered population: A clusters of n_alpha units. n_r_psu / n_b_psu are
// the expected numbers of selected PSUs; units per selected PSU follow
// r_per_cluster / b_per_cluster.
PopulationTruth gen_sim3(Eigen::Index A, Eigen::Index n_alpha, double rho, std::uint64_t seed,
                         double n_r_psu = 100, double n_b_psu = 200,
                         Eigen::Index r_per_cluster = 1, Eigen::Index b_per_cluster = 50);

enum class PiField { R, B };

// Independent Bernoulli(pi_i) selection. z=0 rows always carry pi_r; z=1 rows
// carry it only when pir_known_b is set. use_binary_outcome selects y_bin.
std::vector<UnitRecord> poisson_sample(const PopulationTruth& pop, PiField field,
                                       std::uint64_t seed, bool pir_known_b = true,
                                       bool use_binary_outcome = false);

// PSU-level Poisson at stage one, SRS of per_cluster_n units at stage two.
std::vector<UnitRecord> two_stage_cluster_sample(const PopulationTruth& pop, PiField field,
                                                 Eigen::Index per_cluster_n, std::uint64_t seed,
                                                 bool pir_known_b = true,
                                                 bool use_binary_outcome = false);

// Working-model design builders. The true/false covariate definitions of each
// study live here so estimator code cannot drift from the generator.
enum class ModelRole { QrPapw, QrPapp, PirModel, Pm };

Matrix working_design(int sim_id, ModelRole role, bool true_spec,
                      const std::vector<UnitRecord>& rows, Sim2Fk fk = Sim2Fk::SIN,
                      bool intercept = true);

// Main-effects design for BART (no intercept): x for the membership and
// pi^R models, [x, d] for the outcome model.
Matrix bart_design(ModelRole role, const std::vector<UnitRecord>& rows);

}  // namespace npfuse
