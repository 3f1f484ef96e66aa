#include "npfuse/bart.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

#include "npfuse/glm.hpp"
#include "npfuse/mathx.hpp"

namespace npfuse::bart {

void BartConfig::validate() const {
  require(m >= 1, Err::ConfigInvalid, "m must be >= 1");
  require(nu > 0.0, Err::ConfigInvalid, "nu must be positive");
  require(sigma_quantile > 0.0 && sigma_quantile < 1.0, Err::ConfigInvalid,
          "sigma_quantile in (0,1)");
  require(k > 0.0, Err::ConfigInvalid, "k must be positive");
  require(alpha > 0.0 && alpha < 1.0, Err::ConfigInvalid, "alpha in (0,1)");
  require(beta_depth >= 0.0, Err::ConfigInvalid, "beta_depth must be nonnegative");
  require(n_draws >= 1 && burn_in >= 0 && thin >= 1, Err::ConfigInvalid, "bad draw counts");
  const double ps = p_grow + p_prune + p_change;
  require(p_grow > 0.0 && p_prune > 0.0 && std::abs(ps - 1.0) < 1e-12, Err::ConfigInvalid,
          "move probabilities must be positive and sum to 1");
}

std::vector<int> Tree::leaves() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < nodes.size(); ++i)
    if (nodes[i].is_leaf()) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> Tree::prunable() const {
  std::vector<int> out;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto& nd = nodes[i];
    if (!nd.is_leaf() && nodes[static_cast<std::size_t>(nd.left)].is_leaf() &&
        nodes[static_cast<std::size_t>(nd.right)].is_leaf())
      out.push_back(static_cast<int>(i));
  }
  return out;
}

namespace detail {

double sigma_mu(const BartConfig& config, BartOutput output) {
  const double range = output == BartOutput::Probit ? 3.0 : 0.5;
  return range / (config.k * std::sqrt(static_cast<double>(config.m)));
}

double leaf_log_marginal(double n, double sum_r, double sigma2, double sigma_mu2) {
  const double denom = sigma2 + n * sigma_mu2;
  return 0.5 * std::log(sigma2 / denom) + sigma_mu2 * sum_r * sum_r / (2.0 * sigma2 * denom);
}

namespace {

double log_split_prob(const BartConfig& cfg, int depth) {
  return std::log(cfg.alpha) - cfg.beta_depth * std::log1p(static_cast<double>(depth));
}

double log_no_split_prob(const BartConfig& cfg, int depth) {
  return std::log1p(-cfg.alpha * std::pow(1.0 + static_cast<double>(depth), -cfg.beta_depth));
}

struct SplitStats {
  double n = 0, s = 0, n_l = 0, s_l = 0;
};

SplitStats leaf_split_stats(int leaf, int var, double cut, const Matrix& X, const Vector& resid,
                            const std::vector<int>& node_of) {
  SplitStats st;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    if (node_of[static_cast<std::size_t>(i)] != leaf) continue;
    st.n += 1.0;
    st.s += resid[i];
    if (X(i, var) <= cut) {
      st.n_l += 1.0;
      st.s_l += resid[i];
    }
  }
  return st;
}

}  // namespace

MoveEval evaluate_grow(const Tree& tree, int leaf, int var, double cut, const Matrix& X,
                       const Vector& resid, const std::vector<int>& node_of, double sigma,
                       const BartConfig& config, double sig_mu,
                       const std::vector<Vector>& cutpoints) {
  MoveEval ev;
  const SplitStats st = leaf_split_stats(leaf, var, cut, X, resid, node_of);
  const double n_r = st.n - st.n_l;
  if (st.n_l < 1.0 || n_r < 1.0) return ev;  // empty child: invalid proposal
  ev.valid = true;

  const double sigma2 = sigma * sigma;
  const double sig_mu2 = sig_mu * sig_mu;
  const int depth = tree.nodes[static_cast<std::size_t>(leaf)].depth;
  const double p = static_cast<double>(X.cols());
  const double w = static_cast<double>(cutpoints[static_cast<std::size_t>(var)].size());

  ev.log_prior_ratio = log_split_prob(config, depth) + 2.0 * log_no_split_prob(config, depth + 1) -
                       log_no_split_prob(config, depth) - std::log(p) - std::log(w);
  ev.log_ml_ratio = leaf_log_marginal(st.n_l, st.s_l, sigma2, sig_mu2) +
                    leaf_log_marginal(n_r, st.s - st.s_l, sigma2, sig_mu2) -
                    leaf_log_marginal(st.n, st.s, sigma2, sig_mu2);

  const auto leaves = tree.leaves();
  const auto prunable_now = tree.prunable();
  // After the grow, the grown leaf becomes prunable; its parent (if it was
  // prunable) no longer is.
  const int parent = tree.nodes[static_cast<std::size_t>(leaf)].parent;
  bool parent_prunable = false;
  if (parent >= 0) {
    const auto& pn = tree.nodes[static_cast<std::size_t>(parent)];
    parent_prunable = tree.nodes[static_cast<std::size_t>(pn.left)].is_leaf() &&
                      tree.nodes[static_cast<std::size_t>(pn.right)].is_leaf();
  }
  const double n_prunable_after =
      static_cast<double>(prunable_now.size()) + 1.0 - (parent_prunable ? 1.0 : 0.0);
  const bool is_stump = tree.nodes.size() == 1;
  const double g_eff = is_stump ? 1.0 : config.p_grow;

  ev.log_proposal_ratio = std::log(config.p_prune) - std::log(n_prunable_after) -
                          (std::log(g_eff) - std::log(static_cast<double>(leaves.size())) -
                           std::log(p) - std::log(w));
  return ev;
}

MoveEval evaluate_prune(const Tree& tree, int node, const Matrix& X, const Vector& resid,
                        const std::vector<int>& node_of, double sigma, const BartConfig& config,
                        double sig_mu, const std::vector<Vector>& cutpoints) {
  MoveEval ev;
  const auto& nd = tree.nodes[static_cast<std::size_t>(node)];
  require(!nd.is_leaf(), Err::ConfigInvalid, "prune target must be internal");
  const int left = nd.left, right = nd.right;

  double n_l = 0, s_l = 0, n_r = 0, s_r = 0;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    const int a = node_of[static_cast<std::size_t>(i)];
    if (a == left) {
      n_l += 1.0;
      s_l += resid[i];
    } else if (a == right) {
      n_r += 1.0;
      s_r += resid[i];
    }
  }
  ev.valid = true;

  const double sigma2 = sigma * sigma;
  const double sig_mu2 = sig_mu * sig_mu;
  const double p = static_cast<double>(X.cols());
  const double w = static_cast<double>(cutpoints[static_cast<std::size_t>(nd.var)].size());

  ev.log_prior_ratio = -(log_split_prob(config, nd.depth) +
                         2.0 * log_no_split_prob(config, nd.depth + 1) -
                         log_no_split_prob(config, nd.depth) - std::log(p) - std::log(w));
  ev.log_ml_ratio = leaf_log_marginal(n_l + n_r, s_l + s_r, sigma2, sig_mu2) -
                    leaf_log_marginal(n_l, s_l, sigma2, sig_mu2) -
                    leaf_log_marginal(n_r, s_r, sigma2, sig_mu2);

  const double n_leaves_after = static_cast<double>(tree.leaves().size()) - 1.0;
  const bool stump_after = tree.nodes.size() == 3 && node == 0;
  const double g_eff = stump_after ? 1.0 : config.p_grow;
  const double n_prunable_now = static_cast<double>(tree.prunable().size());
  ev.log_proposal_ratio = std::log(g_eff) - std::log(n_leaves_after) - std::log(p) -
                          std::log(w) - (std::log(config.p_prune) - std::log(n_prunable_now));
  return ev;
}

}  // namespace detail

namespace {

using detail::MoveEval;

struct TreeWorkspace {
  Tree tree;
  std::vector<int> node_of;  // leaf id per training row
  Vector fit;                // current contribution per training row
};

class Sampler {
 public:
  Sampler(const Matrix& X, Vector y_internal, BartOutput output, const BartConfig& cfg)
      : X_(X), y_(std::move(y_internal)), output_(output), cfg_(cfg),
        rng_(Rng::derive(cfg.seed, 0xBA27ULL)) {
    cfg_.validate();
    const Eigen::Index n = X_.rows();
    require(n >= 2, Err::ConfigInvalid, "BART needs at least two rows");

    cutpoints_.resize(static_cast<std::size_t>(X_.cols()));
    for (Eigen::Index j = 0; j < X_.cols(); ++j) {
      std::vector<double> vals(static_cast<std::size_t>(n));
      for (Eigen::Index i = 0; i < n; ++i) vals[static_cast<std::size_t>(i)] = X_(i, j);
      std::sort(vals.begin(), vals.end());
      vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
      cutpoints_[static_cast<std::size_t>(j)] =
          Eigen::Map<Vector>(vals.data(), static_cast<Eigen::Index>(vals.size()));
      if (vals.size() <= 1) ++degenerate_;
    }

    sig_mu_ = detail::sigma_mu(cfg_, output_);
    if (output_ == BartOutput::Probit) {
      sigma_ = 1.0;
      nu_lambda_ = 0.0;
    } else {
      const double sig_est = ols_sigma();
      const double lambda = cfg_.lambda > 0.0
                                ? cfg_.lambda
                                : std::max(1e-12, chisq_quantile(1.0 - cfg_.sigma_quantile, cfg_.nu) /
                                                      cfg_.nu * sig_est * sig_est);
      nu_lambda_ = cfg_.nu * lambda;
      sigma_ = std::max(sig_est, 1e-6);
    }

    work_.resize(static_cast<std::size_t>(cfg_.m));
    for (auto& w : work_) {
      w.node_of.assign(static_cast<std::size_t>(n), 0);
      w.fit = Vector::Zero(n);
    }
    full_fit_ = Vector::Zero(n);
  }

  BartModel run() {
    BartModel model;
    model.output = output_;
    model.p = X_.cols();
    model.cutpoints = cutpoints_;
    model.degenerate_covariates = degenerate_;
    model.states.reserve(static_cast<std::size_t>(cfg_.n_draws));

    const Eigen::Index total = cfg_.burn_in + cfg_.n_draws * cfg_.thin;
    for (Eigen::Index sweep = 0; sweep < total; ++sweep) {
      if (output_ == BartOutput::Probit) draw_latents();
      for (int j = 0; j < cfg_.m; ++j) update_tree(work_[static_cast<std::size_t>(j)]);
      if (output_ != BartOutput::Probit) draw_sigma();
      if (sweep >= cfg_.burn_in && (sweep - cfg_.burn_in + 1) % cfg_.thin == 0) {
        SumOfTreesState st;
        st.trees.reserve(work_.size());
        for (const auto& w : work_) st.trees.push_back(w.tree);
        st.sigma = sigma_;
        st.iteration = sweep;
        model.states.push_back(std::move(st));
      }
    }
    return model;
  }

  // Probit fits need the binary response kept aside; y_ holds the latents.
  void set_binary_response(Vector t) { t_bin_ = std::move(t); }

 private:
  double ols_sigma() {
    const Eigen::Index n = X_.rows();
    if (n <= X_.cols() + 1) return sample_sd(y_);
    Matrix Xi(n, X_.cols() + 1);
    Xi.col(0).setOnes();
    Xi.rightCols(X_.cols()) = X_;
    Eigen::ColPivHouseholderQR<Matrix> qr(Xi);
    qr.setThreshold(1e-10);
    if (qr.rank() < Xi.cols()) {
      const double sd = y_.size() > 1 ? sample_sd(y_) : 0.0;
      return std::max(sd, 1e-6);
    }
    const Vector theta = qr.solve(y_);
    const double rss = (y_ - Xi * theta).squaredNorm();
    return std::sqrt(std::max(rss / static_cast<double>(n - Xi.cols()), 0.0));
  }

  void draw_latents() {
    for (Eigen::Index i = 0; i < X_.rows(); ++i) {
      y_[i] = t_bin_[i] > 0.5 ? rng_.trunc_normal_left(full_fit_[i], 1.0, 0.0)
                              : rng_.trunc_normal_right(full_fit_[i], 1.0, 0.0);
    }
  }

  void draw_sigma() {
    const double rss = (y_ - full_fit_).squaredNorm();
    const double shape = 0.5 * (cfg_.nu + static_cast<double>(X_.rows()));
    const double rate = 0.5 * (nu_lambda_ + rss);
    sigma_ = std::sqrt(rng_.inv_gamma(shape, rate));
  }

  void update_tree(TreeWorkspace& w) {
    const Vector resid = y_ - full_fit_ + w.fit;
    propose_move(w, resid);
    draw_leaves(w, resid);
  }

  void propose_move(TreeWorkspace& w, const Vector& resid) {
    Tree& tree = w.tree;
    const bool stump = tree.nodes.size() == 1;
    double u = stump ? 0.0 : rng_.uniform();
    if (stump || u < cfg_.p_grow) {
      try_grow(w, resid);
    } else if (u < cfg_.p_grow + cfg_.p_prune) {
      try_prune(w, resid);
    } else {
      try_change(w, resid);
    }
  }

  void try_grow(TreeWorkspace& w, const Vector& resid) {
    Tree& tree = w.tree;
    const auto leaves = tree.leaves();
    const int leaf = leaves[rng_.uniform_int(leaves.size())];
    const int var = static_cast<int>(rng_.uniform_int(static_cast<std::uint64_t>(X_.cols())));
    const Vector& cuts = cutpoints_[static_cast<std::size_t>(var)];
    const double cut = cuts[static_cast<Eigen::Index>(rng_.uniform_int(
        static_cast<std::uint64_t>(cuts.size())))];

    const MoveEval ev = detail::evaluate_grow(tree, leaf, var, cut, X_, resid, w.node_of, sigma_,
                                              cfg_, sig_mu_, cutpoints_);
    if (!ev.valid || std::log(rng_.uniform()) >= ev.log_accept()) return;

    auto& nd = tree.nodes[static_cast<std::size_t>(leaf)];
    nd.var = var;
    nd.split = cut;
    const int l = static_cast<int>(tree.nodes.size());
    TreeNode child;
    child.parent = leaf;
    child.depth = nd.depth + 1;
    tree.nodes.push_back(child);
    tree.nodes.push_back(child);
    tree.nodes[static_cast<std::size_t>(leaf)].left = l;
    tree.nodes[static_cast<std::size_t>(leaf)].right = l + 1;
    for (Eigen::Index i = 0; i < X_.rows(); ++i) {
      auto& a = w.node_of[static_cast<std::size_t>(i)];
      if (a == leaf) a = X_(i, var) <= cut ? l : l + 1;
    }
  }

  void try_prune(TreeWorkspace& w, const Vector& resid) {
    Tree& tree = w.tree;
    const auto prunable = tree.prunable();
    if (prunable.empty()) return;
    const int node = prunable[rng_.uniform_int(prunable.size())];
    const MoveEval ev = detail::evaluate_prune(tree, node, X_, resid, w.node_of, sigma_, cfg_,
                                               sig_mu_, cutpoints_);
    if (!ev.valid || std::log(rng_.uniform()) >= ev.log_accept()) return;
    collapse(w, node);
  }

  void collapse(TreeWorkspace& w, int node) {
    Tree& tree = w.tree;
    auto& nd = tree.nodes[static_cast<std::size_t>(node)];
    const int left = nd.left, right = nd.right;
    for (auto& a : w.node_of)
      if (a == left || a == right) a = node;
    nd.var = -1;
    nd.left = nd.right = -1;
    remove_pair(tree, w.node_of, left, right);
  }

  // Removes two (leaf) nodes from the flat array, patching indices.
  static void remove_pair(Tree& tree, std::vector<int>& node_of, int a, int b) {
    if (a > b) std::swap(a, b);
    auto patch = [&](int id) { return id - (id > a) - (id > b); };
    std::vector<TreeNode> next;
    next.reserve(tree.nodes.size() - 2);
    for (int i = 0; i < static_cast<int>(tree.nodes.size()); ++i) {
      if (i == a || i == b) continue;
      TreeNode nd = tree.nodes[static_cast<std::size_t>(i)];
      if (nd.left >= 0) nd.left = patch(nd.left);
      if (nd.right >= 0) nd.right = patch(nd.right);
      if (nd.parent >= 0) nd.parent = patch(nd.parent);
      next.push_back(nd);
    }
    tree.nodes = std::move(next);
    for (auto& id : node_of) id = patch(id);
  }

  void try_change(TreeWorkspace& w, const Vector& resid) {
    Tree& tree = w.tree;
    const auto prunable = tree.prunable();
    if (prunable.empty()) return;
    const int node = prunable[rng_.uniform_int(prunable.size())];
    auto& nd = tree.nodes[static_cast<std::size_t>(node)];
    const int var = static_cast<int>(rng_.uniform_int(static_cast<std::uint64_t>(X_.cols())));
    const Vector& cuts = cutpoints_[static_cast<std::size_t>(var)];
    const double cut = cuts[static_cast<Eigen::Index>(rng_.uniform_int(
        static_cast<std::uint64_t>(cuts.size())))];

    const int left = nd.left, right = nd.right;
    double n_l = 0, s_l = 0, n_r = 0, s_r = 0;       // current split
    double m_l = 0, t_l = 0, m_r = 0, t_r = 0;       // proposed split
    for (Eigen::Index i = 0; i < X_.rows(); ++i) {
      const int a = w.node_of[static_cast<std::size_t>(i)];
      if (a != left && a != right) continue;
      if (a == left) {
        n_l += 1.0;
        s_l += resid[i];
      } else {
        n_r += 1.0;
        s_r += resid[i];
      }
      if (X_(i, var) <= cut) {
        m_l += 1.0;
        t_l += resid[i];
      } else {
        m_r += 1.0;
        t_r += resid[i];
      }
    }
    if (m_l < 1.0 || m_r < 1.0) return;

    const double sigma2 = sigma_ * sigma_;
    const double smu2 = sig_mu_ * sig_mu_;
    const double w_old = static_cast<double>(cutpoints_[static_cast<std::size_t>(nd.var)].size());
    const double w_new = static_cast<double>(cuts.size());
    // Rule-prior and proposal cutpoint factors cancel; kept explicit.
    const double log_accept = detail::leaf_log_marginal(m_l, t_l, sigma2, smu2) +
                              detail::leaf_log_marginal(m_r, t_r, sigma2, smu2) -
                              detail::leaf_log_marginal(n_l, s_l, sigma2, smu2) -
                              detail::leaf_log_marginal(n_r, s_r, sigma2, smu2) +
                              std::log(w_old / w_new) + std::log(w_new / w_old);
    if (std::log(rng_.uniform()) >= log_accept) return;

    nd.var = var;
    nd.split = cut;
    for (Eigen::Index i = 0; i < X_.rows(); ++i) {
      auto& a = w.node_of[static_cast<std::size_t>(i)];
      if (a == left || a == right) a = X_(i, var) <= cut ? left : right;
    }
  }

  void draw_leaves(TreeWorkspace& w, const Vector& resid) {
    Tree& tree = w.tree;
    const std::size_t n_nodes = tree.nodes.size();
    std::vector<double> cnt(n_nodes, 0.0), sum(n_nodes, 0.0);
    for (Eigen::Index i = 0; i < X_.rows(); ++i) {
      const auto a = static_cast<std::size_t>(w.node_of[static_cast<std::size_t>(i)]);
      cnt[a] += 1.0;
      sum[a] += resid[i];
    }
    const double sigma2 = sigma_ * sigma_;
    const double smu2 = sig_mu_ * sig_mu_;
    for (std::size_t id = 0; id < n_nodes; ++id) {
      auto& nd = tree.nodes[id];
      if (!nd.is_leaf()) continue;
      const double denom = sigma2 + cnt[id] * smu2;
      const double mean = smu2 * sum[id] / denom;
      const double sd = std::sqrt(sigma2 * smu2 / denom);
      nd.mu = mean + sd * rng_.normal();
    }
    // Refresh this tree's fit and the running total.
    full_fit_ -= w.fit;
    for (Eigen::Index i = 0; i < X_.rows(); ++i)
      w.fit[i] = tree.nodes[static_cast<std::size_t>(w.node_of[static_cast<std::size_t>(i)])].mu;
    full_fit_ += w.fit;
  }

  const Matrix& X_;
  Vector y_;
  Vector t_bin_;
  BartOutput output_;
  BartConfig cfg_;
  Rng rng_;
  double sig_mu_ = 0.1;
  double sigma_ = 1.0;
  double nu_lambda_ = 0.0;
  std::vector<Vector> cutpoints_;
  Eigen::Index degenerate_ = 0;
  std::vector<TreeWorkspace> work_;
  Vector full_fit_;
};

}  // namespace

BartModel bart_fit_continuous(const Matrix& X, const Vector& y, const BartConfig& config) {
  require(X.rows() == y.size(), Err::LengthMismatch, "rows(X) != length(y)");
  require(y.allFinite(), Err::ResponseOutOfRange, "y must be finite");
  const double ymin = y.minCoeff(), ymax = y.maxCoeff();
  const double scale = ymax > ymin ? ymax - ymin : 1.0;
  const double offset = 0.5 * (ymin + ymax);
  Vector ys = (y.array() - offset) / scale;

  Sampler sampler(X, std::move(ys), BartOutput::Continuous, config);
  BartModel model = sampler.run();
  model.y_offset = offset;
  model.y_scale = scale;
  return model;
}

BartModel bart_fit_probit(const Matrix& X, const Vector& t, const BartConfig& config) {
  require(X.rows() == t.size(), Err::LengthMismatch, "rows(X) != length(t)");
  for (Eigen::Index i = 0; i < t.size(); ++i)
    require(t[i] == 0.0 || t[i] == 1.0, Err::ResponseOutOfRange, "t must be 0/1");
  if (t.minCoeff() == t.maxCoeff()) fail(Err::SingleClass, "both classes must be present");

  BartConfig cfg = config;
  Sampler sampler(X, Vector::Zero(t.size()), BartOutput::Probit, cfg);
  sampler.set_binary_response(t);
  BartModel model = sampler.run();
  model.y_offset = 0.0;
  model.y_scale = 1.0;
  return model;
}

BartModel bart_fit_logit_target(const Matrix& X, const Vector& p, const BartConfig& config) {
  require(X.rows() == p.size(), Err::LengthMismatch, "rows(X) != length(p)");
  Vector lp(p.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    require(p[i] > 0.0 && p[i] < 1.0, Err::ResponseOutOfRange,
            "logit-target response must lie strictly inside (0,1)");
    lp[i] = logit(p[i]);
  }
  BartModel model = bart_fit_continuous(X, lp, config);
  model.output = BartOutput::LogitTarget;
  return model;
}

Vector bart_predict_state(const BartModel& model, const SumOfTreesState& state,
                          const Matrix& X_new, BartScale scale) {
  require(X_new.cols() == model.p, Err::DimensionMismatch,
          "X_new column count != training column count");
  Vector out = Vector::Zero(X_new.rows());
  for (const auto& tree : state.trees)
    for (Eigen::Index i = 0; i < X_new.rows(); ++i) out[i] += tree.value_for(X_new.row(i));
  if (model.output != BartOutput::Probit)
    out = (out.array() * model.y_scale + model.y_offset).matrix();
  if (scale == BartScale::Response) {
    if (model.output == BartOutput::Probit)
      for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = normal_cdf(out[i]);
    else if (model.output == BartOutput::LogitTarget)
      for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = inv_logit(out[i]);
  }
  return out;
}

Matrix bart_predict(const BartModel& model, const Matrix& X_new, BartScale scale) {
  Matrix out(static_cast<Eigen::Index>(model.states.size()), X_new.rows());
  for (std::size_t m = 0; m < model.states.size(); ++m)
    out.row(static_cast<Eigen::Index>(m)) =
        bart_predict_state(model, model.states[m], X_new, scale).transpose();
  return out;
}

namespace {

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

constexpr std::uint32_t kDumpMagic = 0x5442504eU;  // "NPBT"
constexpr std::uint32_t kDumpVersion = 1;

}  // namespace

void save_ensemble(std::ostream& out, const BartModel& model) {
  put(out, kDumpMagic);
  put(out, kDumpVersion);
  put(out, static_cast<std::uint32_t>(model.output));
  put(out, model.y_offset);
  put(out, model.y_scale);
  put(out, static_cast<std::uint64_t>(model.p));
  put(out, static_cast<std::uint64_t>(model.states.size()));
  for (const auto& st : model.states) {
    put(out, st.sigma);
    put(out, static_cast<std::uint64_t>(st.iteration));
    put(out, static_cast<std::uint64_t>(st.trees.size()));
    for (const auto& tree : st.trees) {
      put(out, static_cast<std::uint64_t>(tree.nodes.size()));
      for (const auto& nd : tree.nodes) {
        put(out, static_cast<std::int32_t>(nd.var));
        put(out, nd.split);
        put(out, nd.mu);
        put(out, static_cast<std::int32_t>(nd.left));
        put(out, static_cast<std::int32_t>(nd.right));
        put(out, static_cast<std::int32_t>(nd.parent));
        put(out, static_cast<std::int32_t>(nd.depth));
      }
    }
  }
}

BartModel load_ensemble(std::istream& in) {
  require(get<std::uint32_t>(in) == kDumpMagic, Err::ConfigInvalid, "bad ensemble magic");
  require(get<std::uint32_t>(in) == kDumpVersion, Err::ConfigInvalid, "unknown ensemble version");
  BartModel model;
  model.output = static_cast<BartOutput>(get<std::uint32_t>(in));
  model.y_offset = get<double>(in);
  model.y_scale = get<double>(in);
  model.p = static_cast<Eigen::Index>(get<std::uint64_t>(in));
  const auto n_states = get<std::uint64_t>(in);
  model.states.resize(n_states);
  for (auto& st : model.states) {
    st.sigma = get<double>(in);
    st.iteration = static_cast<Eigen::Index>(get<std::uint64_t>(in));
    st.trees.resize(get<std::uint64_t>(in));
    for (auto& tree : st.trees) {
      tree.nodes.resize(get<std::uint64_t>(in));
      for (auto& nd : tree.nodes) {
        nd.var = get<std::int32_t>(in);
        nd.split = get<double>(in);
        nd.mu = get<double>(in);
        nd.left = get<std::int32_t>(in);
        nd.right = get<std::int32_t>(in);
        nd.parent = get<std::int32_t>(in);
        nd.depth = get<std::int32_t>(in);
      }
    }
  }
  require(in.good(), Err::ConfigInvalid, "truncated ensemble dump");
  return model;
}

}  // namespace npfuse::bart
