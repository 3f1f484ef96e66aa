#include "npfuse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "npfuse/mathx.hpp"
#include "npfuse/parallel.hpp"

namespace npfuse {

MetricsSummary compute_metrics(const Vector& points, const Vector& variances, double truth) {
  require(points.size() == variances.size(), Err::LengthMismatch,
          "points and variances differ in length");
  require(points.size() >= 1, Err::EmptySample, "no replications");
  if (truth == 0.0) fail(Err::ZeroTruth, "relative metrics need a nonzero truth");

  const auto k = points.size();
  MetricsSummary s;
  s.k_effective = k;
  s.truth = truth;
  double bias = 0.0, mse = 0.0, cover = 0.0, mean_se = 0.0;
  for (Eigen::Index i = 0; i < k; ++i) {
    const double dev = points[i] - truth;
    bias += dev;
    mse += dev * dev;
    const double se = std::sqrt(variances[i]);
    mean_se += se;
    if (std::abs(dev) < kZ975 * se) cover += 1.0;
  }
  const double kd = static_cast<double>(k);
  s.rbias_pct = 100.0 * (bias / kd) / truth;
  s.rmse_pct = 100.0 * std::sqrt(mse / kd) / truth;
  s.crci_pct = 100.0 * cover / kd;
  s.rse = k > 1 ? (mean_se / kd) / sample_sd(points) : 0.0;
  return s;
}

namespace {

struct CellSeries {
  std::vector<double> point, var, truth;
  std::vector<char> ok;
  std::vector<std::string> errors;
  explicit CellSeries(Eigen::Index k)
      : point(static_cast<std::size_t>(k)), var(static_cast<std::size_t>(k)),
        truth(static_cast<std::size_t>(k)), ok(static_cast<std::size_t>(k), 0),
        errors(static_cast<std::size_t>(k)) {}
};

Eigen::Index pop_index_from_id(const std::string& id) {
  return static_cast<Eigen::Index>(std::stoll(id.substr(1)));
}

PopulationTruth generate(const ScenarioConfig& cfg, std::uint64_t seed) {
  switch (cfg.sim_id) {
    case 1: return gen_sim1(cfg.population_n, cfg.rho, seed, cfg.n_r, cfg.n_b);
    case 2: return gen_sim2(cfg.population_n, cfg.rho, cfg.fk, seed, cfg.n_r, cfg.n_b);
    case 3: return gen_sim3(cfg.clusters_a, cfg.n_alpha, cfg.rho, seed, cfg.n_r_psu,
                            cfg.n_b_psu);
    default: fail(Err::ConfigInvalid, "unknown sim id " + std::to_string(cfg.sim_id));
  }
}

std::string engine_prefix(const ScenarioConfig& cfg) {
  return cfg.engine == Engine::BART ? "BART-" : "GLM-";
}

// Aggregates one cell across replications against per-replication truths.
MetricsRow aggregate(const std::string& method, const std::string& spec,
                     const CellSeries& series) {
  MetricsRow row;
  row.method = method;
  row.spec = spec;
  const std::size_t k = series.ok.size();
  std::vector<double> dev, se, rel;
  double truth_sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    if (!series.ok[i]) {
      ++row.failures;
      if (row.first_error.empty()) row.first_error = series.errors[i];
      continue;
    }
    dev.push_back(series.point[i] - series.truth[i]);
    rel.push_back((series.point[i] - series.truth[i]) / series.truth[i]);
    se.push_back(std::sqrt(series.var[i]));
    truth_sum += series.truth[i];
  }
  const auto k_eff = static_cast<Eigen::Index>(dev.size());
  row.summary.k_effective = k_eff;
  if (k_eff == 0 || static_cast<double>(row.failures) > 0.10 * static_cast<double>(k)) {
    row.ok = false;
    row.summary.rbias_pct = row.summary.rmse_pct = row.summary.crci_pct = row.summary.rse =
        std::nan("");
    return row;
  }
  row.ok = true;
  row.summary.truth = truth_sum / static_cast<double>(k_eff);
  double bias = 0.0, mse = 0.0, cover = 0.0, mean_se = 0.0;
  for (std::size_t i = 0; i < dev.size(); ++i) {
    bias += rel[i];
    mse += rel[i] * rel[i];
    mean_se += se[i];
    if (std::abs(dev[i]) < kZ975 * se[i]) cover += 1.0;
  }
  const double kd = static_cast<double>(k_eff);
  row.summary.rbias_pct = 100.0 * bias / kd;
  row.summary.rmse_pct = 100.0 * std::sqrt(mse / kd);
  row.summary.crci_pct = 100.0 * cover / kd;
  if (k_eff > 1) {
    const Vector devv = Eigen::Map<const Vector>(dev.data(), k_eff);
    const double sd = sample_sd(devv);
    row.summary.rse = sd > 0.0 ? (mean_se / kd) / sd : 0.0;
  }
  return row;
}

}  // namespace

std::vector<MetricsRow> run_replications(const ScenarioConfig& cfg) {
  require(cfg.k_reps >= 1, Err::ConfigInvalid, "k_reps must be >= 1");
  require(!cfg.methods.empty(), Err::ConfigInvalid, "no methods requested");
  require(!cfg.specs.empty(), Err::ConfigInvalid, "no model specs requested");

  // Fixed cell order: population rows first, then pipeline cells.
  std::vector<std::pair<std::string, std::string>> keys;  // (method display, spec)
  std::vector<std::string> pipeline_keys;
  if (cfg.include_population_rows) {
    keys.push_back({"UW-R", "-"});
    keys.push_back({"FW-R", "-"});
    keys.push_back({"FW-B", "-"});
  }
  for (const auto& spec : cfg.specs)
    for (Method m : cfg.methods) {
      const std::string key = cell_key(m, spec);
      if (std::find(pipeline_keys.begin(), pipeline_keys.end(), key) == pipeline_keys.end()) {
        pipeline_keys.push_back(key);
        const std::string display =
            m == Method::UnweightedB ? "UW-B" : engine_prefix(cfg) + method_name(m);
        keys.push_back({display, spec_label(m, spec)});
      }
    }

  std::map<std::string, CellSeries> series;  // keyed by display|spec
  auto series_key = [](const std::string& method, const std::string& spec) {
    return method + "|" + spec;
  };
  for (const auto& [method, spec] : keys)
    series.try_emplace(series_key(method, spec), cfg.k_reps);

  std::optional<PopulationTruth> fixed_pop;
  if (cfg.fixed_population) fixed_pop = generate(cfg, Rng::derive_seed(cfg.seed, 0xF00DULL));

  parallel_for(static_cast<std::size_t>(cfg.k_reps), cfg.jobs, [&](std::size_t k) {
    const std::uint64_t rep_seed = Rng::derive_seed(cfg.seed, 1000003ULL * k + 17ULL);
    auto mark_all_failed = [&](const std::string& why) {
      for (const auto& [method, spec] : keys) {
        auto& cs = series.at(series_key(method, spec));
        cs.errors[k] = why;
      }
    };

    try {
      const PopulationTruth* pop = nullptr;
      PopulationTruth local_pop;
      if (fixed_pop) {
        pop = &*fixed_pop;
      } else {
        local_pop = generate(cfg, Rng::derive_seed(rep_seed, 0xF00DULL));
        pop = &local_pop;
      }
      const double truth = cfg.use_binary_outcome ? pop->true_mean_bin : pop->true_mean;

      std::vector<UnitRecord> rows_r, rows_b;
      if (cfg.sim_id == 3) {
        rows_r = two_stage_cluster_sample(*pop, PiField::R, pop->r_per_cluster,
                                          Rng::derive_seed(rep_seed, 1), true,
                                          cfg.use_binary_outcome);
        rows_b = two_stage_cluster_sample(*pop, PiField::B, pop->b_per_cluster,
                                          Rng::derive_seed(rep_seed, 2), true,
                                          cfg.use_binary_outcome);
      } else {
        rows_r = poisson_sample(*pop, PiField::R, Rng::derive_seed(rep_seed, 1), true,
                                cfg.use_binary_outcome);
        rows_b = poisson_sample(*pop, PiField::B, Rng::derive_seed(rep_seed, 2), true,
                                cfg.use_binary_outcome);
      }
      if (rows_r.size() < 2 || rows_b.size() < 2) {
        mark_all_failed("degenerate sample draw");
        return;
      }

      const CombinedSample sample = build_combined(
          rows_r, rows_b, static_cast<double>(pop->n_units),
          cfg.use_binary_outcome ? OutcomeKind::Binary : OutcomeKind::Continuous);

      if (cfg.include_population_rows) {
        const Vector& yv = cfg.use_binary_outcome ? pop->y_bin : pop->y;
        Vector y_r(static_cast<Eigen::Index>(rows_r.size()));
        Vector pir(static_cast<Eigen::Index>(rows_r.size()));
        for (std::size_t i = 0; i < rows_r.size(); ++i) {
          y_r[static_cast<Eigen::Index>(i)] = yv[pop_index_from_id(rows_r[i].id)];
          pir[static_cast<Eigen::Index>(i)] = *rows_r[i].pi_r;
        }
        Vector y_b(static_cast<Eigen::Index>(rows_b.size()));
        Vector pib(static_cast<Eigen::Index>(rows_b.size()));
        for (std::size_t i = 0; i < rows_b.size(); ++i) {
          const Eigen::Index pi = pop_index_from_id(rows_b[i].id);
          y_b[static_cast<Eigen::Index>(i)] = yv[pi];
          pib[static_cast<Eigen::Index>(i)] = pop->pi_b[pi];
        }
        auto fill = [&](const std::string& name, double point, double var) {
          auto& cs = series.at(series_key(name, "-"));
          cs.point[k] = point;
          cs.var[k] = var;
          cs.truth[k] = truth;
          cs.ok[k] = 1;
        };
        fill("UW-R", y_r.mean(),
             y_r.size() > 1 ? sample_variance(y_r) / static_cast<double>(y_r.size()) : 0.0);
        {
          Vector w = pir.cwiseInverse();
          const double pt = hajek_mean(y_r, w);
          double nhat = w.sum(), v = 0.0;
          for (Eigen::Index i = 0; i < y_r.size(); ++i) {
            const double dev = (y_r[i] - pt) / pir[i];
            v += (1.0 - pir[i]) * dev * dev;
          }
          fill("FW-R", pt, v / (nhat * nhat));
        }
        {
          Vector w = pib.cwiseInverse();
          const double pt = hajek_mean(y_b, w);
          double nhat = w.sum(), v = 0.0;
          for (Eigen::Index i = 0; i < y_b.size(); ++i) {
            const double dev = (y_b[i] - pt) / pib[i];
            v += (1.0 - pib[i]) * dev * dev;
          }
          fill("FW-B", pt, v / (nhat * nhat));
        }
      }

      PipelineOptions opt;
      opt.sim_id = cfg.sim_id;
      opt.fk = cfg.fk;
      opt.engine = cfg.engine;
      opt.inference = cfg.inference;
      opt.normalization = cfg.normalization;
      opt.joint_dr = cfg.joint_dr;
      opt.m_sub = cfg.m_sub;
      opt.mcmc_draws = cfg.mcmc_draws;
      opt.mcmc_burn_in = cfg.mcmc_burn_in;
      opt.bart_draws = cfg.bart_draws;
      opt.bart_burn_in = cfg.bart_burn_in;
      opt.bart_thin = cfg.bart_thin;
      opt.bart_m_continuous = cfg.bart_m_continuous;
      opt.bart_m_probit = cfg.bart_m_probit;
      opt.bootstrap_b = cfg.bootstrap_b;
      opt.cluster_bootstrap = cfg.cluster_bootstrap;
      opt.within_by_cluster = cfg.sim_id == 3 && cfg.inference == InferenceMode::Bayesian;
      opt.seed = rep_seed;

      const CellMap cells = run_pipeline(sample, opt, cfg.methods, cfg.specs);
      for (const auto& spec : cfg.specs)
        for (Method m : cfg.methods) {
          const auto it = cells.find(cell_key(m, spec));
          if (it == cells.end()) continue;
          const std::string display =
              m == Method::UnweightedB ? "UW-B" : engine_prefix(cfg) + method_name(m);
          auto& cs = series.at(series_key(display, spec_label(m, spec)));
          if (cs.ok[k] || !cs.errors[k].empty()) continue;  // already filled by another spec
          if (it->second.ok) {
            cs.point[k] = it->second.point;
            cs.var[k] = it->second.variance;
            cs.truth[k] = truth;
            cs.ok[k] = 1;
          } else {
            cs.errors[k] = it->second.error;
          }
        }
    } catch (const Error& e) {
      mark_all_failed(e.what());
    }
  });

  std::vector<MetricsRow> rows;
  rows.reserve(keys.size());
  for (const auto& [method, spec] : keys)
    rows.push_back(aggregate(method, spec, series.at(series_key(method, spec))));
  return rows;
}

}  // namespace npfuse
