#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "npfuse/common.hpp"
#include "npfuse/rng.hpp"

namespace npfuse::bart {

struct BartConfig {
  int m = 200;  // trees in the ensemble
  double nu = 3.0;
  double lambda = 0.0;          // <= 0: calibrate from an OLS sigma-hat
  double sigma_quantile = 0.9;  // P(sigma < sigma-hat) used in the calibration
  double k = 2.0;               // leaf-prior spread
  double alpha = 0.95;          // depth prior: alpha * (1 + depth)^(-beta_depth)
  double beta_depth = 2.0;
  Eigen::Index n_draws = 1000;  // kept post-burn-in states
  Eigen::Index burn_in = 1000;
  Eigen::Index thin = 1;        // sweeps between kept states
  std::uint64_t seed = 0;
  double p_grow = 0.4, p_prune = 0.4, p_change = 0.2;

  void validate() const;
};

// Flat binary tree; node 0 is the root. Internal nodes carry (var, split)
// with ties going left (x <= split); leaves carry mu.
struct TreeNode {
  int var = -1;
  double split = 0.0;
  double mu = 0.0;
  int left = -1, right = -1, parent = -1;
  int depth = 0;
  bool is_leaf() const { return var < 0; }
};

struct Tree {
  std::vector<TreeNode> nodes{TreeNode{}};

  int leaf_for(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
    int id = 0;
    while (!nodes[static_cast<std::size_t>(id)].is_leaf()) {
      const auto& nd = nodes[static_cast<std::size_t>(id)];
      id = x[nd.var] <= nd.split ? nd.left : nd.right;
    }
    return id;
  }
  double value_for(const Eigen::Ref<const Eigen::RowVectorXd>& x) const {
    return nodes[static_cast<std::size_t>(leaf_for(x))].mu;
  }
  std::vector<int> leaves() const;
  // Internal nodes whose both children are leaves (grow's inverse targets).
  std::vector<int> prunable() const;
};

struct SumOfTreesState {
  std::vector<Tree> trees;
  double sigma = 1.0;  // on the internal (scaled / latent) scale
  Eigen::Index iteration = 0;
};

enum class BartOutput { Continuous, Probit, LogitTarget };

struct BartModel {
  BartOutput output = BartOutput::Continuous;
  std::vector<SumOfTreesState> states;
  double y_offset = 0.0, y_scale = 1.0;  // original = internal * y_scale + y_offset
  Eigen::Index p = 0;
  std::vector<Vector> cutpoints;  // sorted unique training values per covariate
  Eigen::Index degenerate_covariates = 0;  // single-valued columns (never split)
};

BartModel bart_fit_continuous(const Matrix& X, const Vector& y, const BartConfig& config);
BartModel bart_fit_probit(const Matrix& X, const Vector& t, const BartConfig& config);
BartModel bart_fit_logit_target(const Matrix& X, const Vector& p, const BartConfig& config);

enum class BartScale { Latent, Response };

// Row m = evaluation of state m at each row of X_new. Response maps the
// sum-of-trees through the model's output transform (identity on original
// units / Phi / inverse logit); Latent returns the untransformed function.
Matrix bart_predict(const BartModel& model, const Matrix& X_new,
                    BartScale scale = BartScale::Response);
Vector bart_predict_state(const BartModel& model, const SumOfTreesState& state,
                          const Matrix& X_new, BartScale scale = BartScale::Response);

// Debug dump of a fitted ensemble (versioned little-endian binary; see
// docs/bart-dump.md). Not a compatibility surface.
void save_ensemble(std::ostream& out, const BartModel& model);
BartModel load_ensemble(std::istream& in);

namespace detail {

// Leaf-prior spread on the internal scale.
double sigma_mu(const BartConfig& config, BartOutput output);

// Log marginal likelihood contribution of one leaf holding (n, sum_r).
double leaf_log_marginal(double n, double sum_r, double sigma2, double sigma_mu2);

struct MoveEval {
  bool valid = false;
  double log_prior_ratio = 0.0;
  double log_ml_ratio = 0.0;
  double log_proposal_ratio = 0.0;
  double log_accept() const { return log_prior_ratio + log_ml_ratio + log_proposal_ratio; }
};

// Acceptance decomposition for a grow of `leaf` with rule (var, cut), given
// the residual vector and the leaf membership of every training row.
MoveEval evaluate_grow(const Tree& tree, int leaf, int var, double cut, const Matrix& X,
                       const Vector& resid, const std::vector<int>& node_of, double sigma,
                       const BartConfig& config, double sig_mu,
                       const std::vector<Vector>& cutpoints);

// Acceptance decomposition for pruning the children of internal node `node`.
MoveEval evaluate_prune(const Tree& tree, int node, const Matrix& X, const Vector& resid,
                        const std::vector<int>& node_of, double sigma, const BartConfig& config,
                        double sig_mu, const std::vector<Vector>& cutpoints);

}  // namespace detail

}  // namespace npfuse::bart
