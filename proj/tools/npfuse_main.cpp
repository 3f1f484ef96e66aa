#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "npfuse/csv.hpp"
#include "npfuse/mathx.hpp"
#include "npfuse/metrics.hpp"
#include "npfuse/report.hpp"

namespace {

using namespace npfuse;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitPartial = 2;

std::vector<Method> parse_methods(const std::vector<std::string>& names) {
  static const std::map<std::string, Method> lookup = {
      {"unweighted", Method::UnweightedB}, {"papw", Method::PAPW},
      {"papp", Method::PAPP},              {"ipsw", Method::IPSW},
      {"pm", Method::PM},                  {"aipw-papw", Method::AipwPapw},
      {"aipw-papp", Method::AipwPapp},     {"aipw-ipsw", Method::AipwIpsw},
  };
  std::vector<Method> out;
  for (const auto& n : names) {
    const auto it = lookup.find(n);
    if (it == lookup.end())
      fail(Err::ConfigInvalid, "unknown method '" + n +
                                   "'; valid: unweighted papw papp ipsw pm aipw-papw "
                                   "aipw-papp aipw-ipsw");
    out.push_back(it->second);
  }
  return out;
}

std::vector<ModelSpec> parse_specs(const std::vector<std::string>& names) {
  std::vector<ModelSpec> out;
  for (const auto& n : names) {
    if (n.size() != 2 || (n[0] != 'T' && n[0] != 'F') || (n[1] != 'T' && n[1] != 'F'))
      fail(Err::ConfigInvalid, "bad spec '" + n + "'; expected TT, TF, FT or FF");
    out.push_back({n[0] == 'T', n[1] == 'T'});
  }
  return out;
}

struct SimulateArgs {
  std::string scenario = "sim1";
  double rho = 0.5;
  std::string fk = "SIN";
  Eigen::Index k = 100;
  std::uint64_t seed = 1;
  int jobs = 1;
  std::string out_path;
  std::string format = "csv";
  std::string engine = "glm";
  bool bayes = false;
  Eigen::Index m = 200;
  Eigen::Index boot = 0;
  Eigen::Index n = 0;  // population size (0 = scenario default)
  double n_r = 100, n_b = 1000;
  Eigen::Index clusters = 200, n_alpha = 1000;
  double n_r_psu = 100, n_b_psu = 100;
  bool binary = false;
  std::vector<std::string> methods;
  std::vector<std::string> specs;
  bool fixed_population = false;
  Eigen::Index mcmc_draws = 1000, mcmc_burn = 1000;
  Eigen::Index bart_burn = 1000, bart_thin = 5;
  int bart_trees = 200, bart_trees_probit = 50;
};

ScenarioConfig make_scenario(const SimulateArgs& a) {
  ScenarioConfig cfg;
  if (a.scenario == "sim1")
    cfg.sim_id = 1;
  else if (a.scenario == "sim2")
    cfg.sim_id = 2;
  else if (a.scenario == "sim3")
    cfg.sim_id = 3;
  else
    fail(Err::ConfigInvalid, "unknown scenario '" + a.scenario + "'; valid: sim1 sim2 sim3");

  cfg.rho = a.rho;
  if (a.fk == "SIN")
    cfg.fk = Sim2Fk::SIN;
  else if (a.fk == "EXP")
    cfg.fk = Sim2Fk::EXP;
  else if (a.fk == "SQR")
    cfg.fk = Sim2Fk::SQR;
  else
    fail(Err::ConfigInvalid, "unknown fk '" + a.fk + "'; valid: SIN EXP SQR");

  cfg.population_n = a.n > 0 ? a.n : 100000;
  cfg.clusters_a = a.clusters;
  cfg.n_alpha = a.n_alpha;
  cfg.n_r = a.n_r;
  cfg.n_b = a.n_b;
  cfg.n_r_psu = a.n_r_psu;
  cfg.n_b_psu = a.n_b_psu;
  cfg.engine = a.engine == "bart" ? Engine::BART : Engine::GLM;
  if (a.engine != "bart" && a.engine != "glm")
    fail(Err::ConfigInvalid, "unknown engine '" + a.engine + "'; valid: glm bart");
  cfg.inference = a.bayes || cfg.engine == Engine::BART ? InferenceMode::Bayesian
                                                        : InferenceMode::Frequentist;
  cfg.use_binary_outcome = a.binary;
  cfg.m_sub = a.m;
  cfg.mcmc_draws = a.mcmc_draws;
  cfg.mcmc_burn_in = a.mcmc_burn;
  cfg.bart_draws = a.m;
  cfg.bart_burn_in = a.bart_burn;
  cfg.bart_thin = a.bart_thin;
  cfg.bart_m_continuous = a.bart_trees;
  cfg.bart_m_probit = a.bart_trees_probit;
  cfg.bootstrap_b = a.boot;
  cfg.cluster_bootstrap = cfg.sim_id == 3;
  cfg.k_reps = a.k;
  cfg.seed = a.seed;
  cfg.jobs = a.jobs;
  cfg.fixed_population = a.fixed_population;

  // Scenario defaults mirror the study designs.
  if (cfg.sim_id == 3) {
    if (a.boot == 0) cfg.bootstrap_b = 200;
    cfg.joint_dr = false;  // QR and PM fitted separately in the clustered study
  }
  if (!a.methods.empty()) {
    cfg.methods = parse_methods(a.methods);
  } else if (cfg.sim_id == 1 && cfg.inference == InferenceMode::Frequentist) {
    cfg.methods = {Method::UnweightedB, Method::PAPW,     Method::IPSW,
                   Method::PM,          Method::AipwPapw, Method::AipwIpsw};
  } else if (cfg.sim_id == 1) {
    cfg.methods = {Method::UnweightedB, Method::PAPW, Method::PAPP,
                   Method::PM,          Method::AipwPapw, Method::AipwPapp};
  } else if (cfg.sim_id == 2) {
    cfg.methods = {Method::UnweightedB, Method::PAPW, Method::PAPP,
                   Method::PM,          Method::AipwPapw, Method::AipwPapp};
  } else {
    cfg.methods = {Method::UnweightedB, Method::PAPW,     Method::PAPP,     Method::IPSW,
                   Method::PM,          Method::AipwPapw, Method::AipwPapp, Method::AipwIpsw};
  }
  cfg.specs = a.specs.empty() ? std::vector<ModelSpec>{{true, true}, {true, false},
                                                        {false, true}, {false, false}}
                              : parse_specs(a.specs);
  return cfg;
}

int cmd_simulate(const SimulateArgs& args) {
  ScenarioConfig cfg;
  try {
    cfg = make_scenario(args);
  } catch (const Error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }

  std::vector<MetricsRow> rows;
  try {
    rows = run_replications(cfg);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  const std::string body = args.format == "json" ? metrics_to_json(rows) : metrics_to_csv(rows);
  if (args.out_path.empty()) {
    std::cout << body;
  } else {
    std::ofstream out(args.out_path, std::ios::binary);
    if (!out) {
      std::cerr << "cannot open output file '" << args.out_path << "'\n";
      return kExitConfig;
    }
    out << body;
  }
  for (const auto& r : rows)
    if (!r.ok) {
      std::cerr << "cell " << r.method << "|" << r.spec << " failed: " << r.first_error << "\n";
      return kExitPartial;
    }
  return kExitOk;
}

struct EstimateArgs {
  std::string data_path;
  std::string reference_path, nonprob_path;
  std::vector<std::string> methods{"aipw-papw"};
  std::string engine = "glm";
  std::string variance = "auto";
  Eigen::Index m = 200;
  Eigen::Index boot = 200;
  std::uint64_t seed = 1;
  int jobs = 1;
  double population_size = 0;
  bool binary = false;
  bool cluster = false;
  std::string qr_covariates = "auto";  // x | xstar | auto
  std::string pm_covariates = "auto";  // x | xstar | lwp | auto
  Eigen::Index mcmc_draws = 1000, mcmc_burn = 1000;
  Eigen::Index bart_burn = 1000, bart_thin = 5;
  int bart_trees = 200, bart_trees_probit = 50;
  std::string given_pib_col, given_pm_col;
  std::string out_path;
  std::string export_weights_path;
  // Bootstrap replicates evaluate the estimator on derived resamples, where
  // a stray pseudo-inclusion probability above one is kept (and the main
  // fit's strict check already ran); user-facing fits stay strict.
  bool strict_pib = true;
};

struct LoadedData {
  CombinedSample sample;
  std::optional<Vector> given_pib;     // aligned with S_B record order
  std::optional<Vector> given_m_all;   // aligned with record order
};

// Extracts an unreserved column in file order. Cells may be empty on rows
// where the value is not needed; the caller validates the slice it uses.
std::vector<std::optional<double>> extract_extra(const UnitsCsv& csv, const std::string& col,
                                                 const char* what) {
  const auto it = csv.extra.find(col);
  if (it == csv.extra.end())
    fail(Err::ConfigInvalid, std::string(what) + " column '" + col + "' not present in the CSV");
  return it->second;
}

LoadedData load_data(const EstimateArgs& args) {
  std::vector<UnitRecord> ref_rows, npb_rows;
  UnitsCsv combined_csv;
  std::vector<int> row_z;

  if (!args.data_path.empty()) {
    combined_csv = read_units_csv_file(args.data_path);
    for (auto& r : combined_csv.rows) {
      (r.z == 1 ? npb_rows : ref_rows).push_back(r);
      row_z.push_back(r.z);
    }
  } else {
    require(!args.reference_path.empty() && !args.nonprob_path.empty(), Err::ConfigInvalid,
            "provide either --data or both --reference and --nonprob");
    UnitsCsv ref = read_units_csv_file(args.reference_path);
    UnitsCsv npb = read_units_csv_file(args.nonprob_path);
    for (auto& r : npb.rows) r.z = 1;
    for (auto& r : ref.rows) r.z = 0;
    // Merge in nonprob-then-reference order to match CombinedSample layout.
    combined_csv.rows = npb.rows;
    combined_csv.rows.insert(combined_csv.rows.end(), ref.rows.begin(), ref.rows.end());
    std::vector<std::string> names;
    for (const auto& [name, col] : npb.extra) names.push_back(name);
    for (const auto& [name, col] : ref.extra)
      if (!npb.extra.count(name)) names.push_back(name);
    for (const auto& name : names) {
      auto& merged = combined_csv.extra[name];
      const auto nit = npb.extra.find(name);
      merged = nit != npb.extra.end()
                   ? nit->second
                   : std::vector<std::optional<double>>(npb.rows.size());
      const auto it = ref.extra.find(name);
      if (it != ref.extra.end())
        merged.insert(merged.end(), it->second.begin(), it->second.end());
      else
        merged.resize(combined_csv.rows.size());
    }
    npb_rows = npb.rows;
    ref_rows = ref.rows;
    for (const auto& r : combined_csv.rows) row_z.push_back(r.z);
  }

  LoadedData data;
  data.sample = build_combined(ref_rows, npb_rows,
                               args.population_size > 0
                                   ? std::optional<double>(args.population_size)
                                   : std::nullopt,
                               args.binary ? OutcomeKind::Binary : OutcomeKind::Continuous);

  // Extra columns arrive in file order; the sample stores nonprob rows first.
  auto reorder = [&](const std::vector<std::optional<double>>& file_order) {
    std::vector<std::optional<double>> out(file_order.size());
    Eigen::Index kb = 0, kr = data.sample.n_b;
    for (std::size_t i = 0; i < row_z.size(); ++i)
      out[static_cast<std::size_t>(row_z[i] == 1 ? kb++ : kr++)] = file_order[i];
    return out;
  };
  auto dense = [](const std::vector<std::optional<double>>& col, Eigen::Index from,
                  Eigen::Index count, const char* what) {
    Vector out(count);
    for (Eigen::Index i = 0; i < count; ++i) {
      const auto& cell = col[static_cast<std::size_t>(from + i)];
      require(cell.has_value(), Err::MissingField,
              std::string(what) + " has an empty cell on a row that needs it");
      out[i] = *cell;
    }
    return out;
  };
  if (!args.given_pib_col.empty()) {
    const auto all = reorder(extract_extra(combined_csv, args.given_pib_col, "--given-pib"));
    data.given_pib = dense(all, 0, data.sample.n_b, "--given-pib");
  }
  if (!args.given_pm_col.empty()) {
    const auto all = reorder(extract_extra(combined_csv, args.given_pm_col, "--given-pm"));
    data.given_m_all = dense(all, 0, data.sample.size(), "--given-pm");
  }
  return data;
}

// General-data estimation: raw covariate designs (no simulation working
// models), GLM or BART engines, choice of variance estimator.
std::vector<EstimateReport> run_estimate(const EstimateArgs& args, const LoadedData& data,
                                         std::map<std::string, std::vector<double>>* weights_out);

int cmd_estimate(const EstimateArgs& args) {
  LoadedData data;
  std::vector<EstimateReport> reports;
  std::map<std::string, std::vector<double>> weights;
  try {
    data = load_data(args);
    reports = run_estimate(args, data, &weights);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    if (e.code() == Err::MissingField || e.code() == Err::MissingN ||
        e.code() == Err::OutOfRange)
      std::cerr << "hint: check the route requirements (PAPW needs pi_r on the non-probability "
                   "rows; PAPP needs pi_r on the reference rows only; KnownN needs "
                   "--population-size)\n";
    return kExitConfig;
  }

  const std::string body = report_to_json(reports);
  if (args.out_path.empty()) {
    std::cout << body;
  } else {
    std::ofstream out(args.out_path, std::ios::binary);
    if (!out) {
      std::cerr << "cannot open output file '" << args.out_path << "'\n";
      return kExitConfig;
    }
    out << body;
  }
  if (!args.export_weights_path.empty() && !weights.empty()) {
    std::vector<UnitRecord> rows_b;
    for (const auto& r : data.sample.records)
      if (r.z == 1) rows_b.push_back(r);
    write_units_csv_file(args.export_weights_path, rows_b, weights);
  }
  return kExitOk;
}

}  // namespace

// Defined below main for readability.
namespace {

struct GeneralFits {
  Vector pib_b;          // single-vector pseudo-inclusion (frequentist)
  Vector m_hat_all;      // outcome-model means (frequentist)
  Vector sigma2_all;
  Matrix pib_draws;      // Bayesian
  Matrix y_hat_draws;
  std::optional<Matrix> pir_draws;
  Vector p_all;          // membership probabilities (frequentist, for sandwich)
  Matrix x_qr_all;
};

Matrix general_design(const std::vector<UnitRecord>& rows, const std::string& which,
                      bool intercept) {
  if (which == "x") return design_matrix(rows, CovariateSet::X, intercept);
  if (which == "xstar") return design_matrix(rows, CovariateSet::XStar, intercept);
  if (which == "lwp") {
    // x plus the reference weight as a single extra predictor
    Matrix base = design_matrix(rows, CovariateSet::X, intercept);
    Matrix out(base.rows(), base.cols() + 1);
    out.leftCols(base.cols()) = base;
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      const auto& r = rows[static_cast<std::size_t>(i)];
      require(r.pi_r.has_value(), Err::MissingField,
              "lwp covariates need pi_r on row id=" + r.id);
      out(i, base.cols()) = 1.0 / *r.pi_r;
    }
    return out;
  }
  fail(Err::ConfigInvalid, "unknown covariate set '" + which + "'; valid: x xstar lwp");
}

std::string resolve_covset(const std::string& requested, const CombinedSample& s) {
  if (requested != "auto") return requested;
  return s.x_star_layout.q > 0 ? "xstar" : "x";
}

}  // namespace

namespace {

std::string cli_method_name(Method m) {
  switch (m) {
    case Method::UnweightedB: return "unweighted";
    case Method::PAPW: return "papw";
    case Method::PAPP: return "papp";
    case Method::IPSW: return "ipsw";
    case Method::PM: return "pm";
    case Method::AipwPapw: return "aipw-papw";
    case Method::AipwPapp: return "aipw-papp";
    case Method::AipwIpsw: return "aipw-ipsw";
  }
  return "?";
}

std::vector<EstimateReport> run_estimate(const EstimateArgs& args, const LoadedData& data,
                                         std::map<std::string, std::vector<double>>* weights_out) {
  const CombinedSample& s = data.sample;
  const std::vector<Method> methods = parse_methods(args.methods);
  const bool bayes = args.variance == "rubin" || args.engine == "bart";
  require(args.variance != "bootstrap" || (args.given_pib_col.empty() && args.given_pm_col.empty()),
          Err::ConfigInvalid, "bootstrap refits models per replicate; it cannot combine with "
                              "--given-pib / --given-pm columns");
  const std::string qr_set = resolve_covset(args.qr_covariates, s);
  const std::string pm_set = resolve_covset(args.pm_covariates, s);

  std::vector<UnitRecord> rows_b, rows_r;
  for (const auto& r : s.records) (r.z == 1 ? rows_b : rows_r).push_back(r);
  const auto idx_b = s.indices_b();
  const auto idx_r = s.indices_r();

  auto split_b = [&](const Vector& all) {
    Vector out(s.n_b);
    for (Eigen::Index i = 0; i < s.n_b; ++i) out[i] = all[idx_b[static_cast<std::size_t>(i)]];
    return out;
  };
  auto split_r = [&](const Vector& all) {
    Vector out(s.n_r);
    for (Eigen::Index j = 0; j < s.n_r; ++j) out[j] = all[idx_r[static_cast<std::size_t>(j)]];
    return out;
  };

  bool need_qr = false, need_pm = false, need_pir = false;
  for (Method m : methods) {
    if (m == Method::PAPW || m == Method::PAPP || m == Method::IPSW || m == Method::AipwPapw ||
        m == Method::AipwPapp || m == Method::AipwIpsw)
      need_qr = true;
    if (m == Method::PM || m == Method::AipwPapw || m == Method::AipwPapp ||
        m == Method::AipwIpsw)
      need_pm = true;
    if (m == Method::PAPP || m == Method::AipwPapp) need_pir = true;
  }
  if (data.given_pib) need_qr = false;
  if (data.given_m_all) need_pm = false;

  GeneralFits fits;
  const Family pm_family = s.outcome == OutcomeKind::Binary ? Family::Logistic : Family::Linear;

  if (!bayes) {
    if (need_qr) {
      fits.x_qr_all = general_design(s.records, qr_set, true);
      const GlmFit z_fit = fit_logistic(fits.x_qr_all, s.z_vector());
      fits.p_all = predict(z_fit, fits.x_qr_all, PredictScale::Mean);
    }
    if (need_pir) {
      const Matrix xr = general_design(rows_r, "x", true);
      const GlmFit pir_fit = fit_beta_regression(xr, s.pi_r_r());
      const Matrix xb = general_design(rows_b, "x", true);
      fits.pib_b = Vector();  // combined below per method
      fits.pir_draws = predict(pir_fit, xb, PredictScale::Mean).transpose();
    }
    if (need_pm) {
      const Matrix xb = general_design(rows_b, pm_set, true);
      const GlmFit fit = pm_family == Family::Logistic ? fit_logistic(xb, s.y_b())
                                                       : fit_linear(xb, s.y_b());
      const Matrix xall = general_design(s.records, pm_set, true);
      fits.m_hat_all = predict(fit, xall, PredictScale::Mean);
      fits.sigma2_all = Vector(s.size());
      if (pm_family == Family::Logistic)
        for (Eigen::Index i = 0; i < s.size(); ++i)
          fits.sigma2_all[i] = fits.m_hat_all[i] * (1.0 - fits.m_hat_all[i]);
      else
        fits.sigma2_all.setConstant(*fit.dispersion * *fit.dispersion);
    }
  } else {
    PosteriorConfig mc;
    mc.n_draws = args.mcmc_draws;
    mc.burn_in = args.mcmc_burn;
    bart::BartConfig bc;
    bc.n_draws = args.m;
    bc.burn_in = args.bart_burn;
    bc.thin = args.bart_thin;
    auto subsample = [&](PosteriorDraws d, std::uint64_t stream) {
      if (args.m > 0 && args.m < d.n_draws()) {
        Rng rng = Rng::derive(args.seed, stream);
        d = subsample_draws(d, args.m, rng);
      }
      return d;
    };
    if (need_qr) {
      if (args.engine == "bart") {
        const Matrix x = design_matrix(s.records, qr_set == "x" ? CovariateSet::X
                                                                : CovariateSet::XStar, false);
        const Matrix xb = design_matrix(rows_b, qr_set == "x" ? CovariateSet::X
                                                              : CovariateSet::XStar, false);
        bart::BartConfig cfg = bc;
        cfg.m = args.bart_trees_probit;
        cfg.seed = Rng::derive_seed(args.seed, 0x21);
        fits.pib_draws = bart::bart_predict(bart::bart_fit_probit(x, s.z_vector(), cfg), xb);
      } else {
        const Matrix x = general_design(s.records, qr_set, true);
        mc.seed = Rng::derive_seed(args.seed, 0x21);
        const PosteriorDraws d = subsample(posterior_sample(Family::Logistic, x, s.z_vector(), mc),
                                           0x21);
        const Matrix xb = general_design(rows_b, qr_set, true);
        fits.pib_draws = predict(d, xb, PredictScale::Mean);
      }
    }
    if (need_pir) {
      if (args.engine == "bart") {
        const Matrix xr = design_matrix(rows_r, CovariateSet::X, false);
        const Matrix xb = design_matrix(rows_b, CovariateSet::X, false);
        bart::BartConfig cfg = bc;
        cfg.m = args.bart_trees;
        cfg.seed = Rng::derive_seed(args.seed, 0x23);
        fits.pir_draws = bart::bart_predict(bart::bart_fit_logit_target(xr, s.pi_r_r(), cfg), xb);
      } else {
        const Matrix xr = general_design(rows_r, "x", true);
        mc.seed = Rng::derive_seed(args.seed, 0x23);
        const PosteriorDraws d = subsample(posterior_sample(Family::Beta, xr, s.pi_r_r(), mc),
                                           0x23);
        const Matrix xb = general_design(rows_b, "x", true);
        fits.pir_draws = predict(d, xb, PredictScale::Mean);
      }
    }
    if (need_pm) {
      if (args.engine == "bart") {
        const Matrix xb = design_matrix(rows_b, pm_set == "x" ? CovariateSet::X
                                                              : CovariateSet::XStar, false);
        const Matrix xall = design_matrix(s.records, pm_set == "x" ? CovariateSet::X
                                                                   : CovariateSet::XStar, false);
        bart::BartConfig cfg = bc;
        cfg.m = s.outcome == OutcomeKind::Binary ? args.bart_trees_probit : args.bart_trees;
        cfg.seed = Rng::derive_seed(args.seed, 0x24);
        const auto model = s.outcome == OutcomeKind::Binary
                               ? bart::bart_fit_probit(xb, s.y_b(), cfg)
                               : bart::bart_fit_continuous(xb, s.y_b(), cfg);
        fits.y_hat_draws = bart::bart_predict(model, xall);
      } else {
        const Matrix xb = general_design(rows_b, pm_set, true);
        mc.seed = Rng::derive_seed(args.seed, 0x24);
        const PosteriorDraws d = subsample(posterior_sample(pm_family, xb, s.y_b(), mc), 0x24);
        const Matrix xall = general_design(s.records, pm_set, true);
        fits.y_hat_draws = predict(d, xall, PredictScale::Mean);
      }
    }
  }

  std::vector<EstimateReport> reports;
  for (Method method : methods) {
    EstimateReport rep;
    rep.method = (args.engine == "bart" ? "BART-" : "GLM-") + method_name(method);

    // Pseudo-inclusion probabilities for the chosen route.
    auto pib_single = [&]() -> Vector {
      if (data.given_pib) return *data.given_pib;
      if (method == Method::PAPW || method == Method::AipwPapw)
        return papw(s, split_b(fits.p_all).transpose(), args.strict_pib).single();
      if (method == Method::PAPP || method == Method::AipwPapp)
        return papp(s, *fits.pir_draws, split_b(fits.p_all).transpose(), args.strict_pib)
            .single();
      // IPSW route
      const Matrix xb = general_design(rows_b, qr_set == "xstar" ? "xstar" : "x", true);
      const GlmFit pmle = solve_pmle(s, qr_set == "xstar" ? CovariateSet::XStar : CovariateSet::X);
      return predict(pmle, xb, PredictScale::Mean);
    };

    auto m_all = [&]() -> Vector {
      if (data.given_m_all) return *data.given_m_all;
      return fits.m_hat_all;
    };

    try {
      if (!bayes) {
        switch (method) {
          case Method::UnweightedB: {
            const Vector yb = s.y_b();
            rep.point = yb.mean();
            rep.se = yb.size() > 1
                         ? std::sqrt(sample_variance(yb) / static_cast<double>(yb.size()))
                         : 0.0;
            break;
          }
          case Method::PAPW:
          case Method::PAPP:
          case Method::IPSW: {
            const Vector pib = pib_single();
            Vector w(pib.size());
            for (Eigen::Index i = 0; i < pib.size(); ++i) w[i] = 1.0 / pib[i];
            rep.point = hajek_mean(s.y_b(), w);
            if (weights_out) {
              std::vector<double> col(static_cast<std::size_t>(pib.size()));
              for (Eigen::Index i = 0; i < pib.size(); ++i)
                col[static_cast<std::size_t>(i)] = w[i];
              (*weights_out)["pseudo_weight"] = col;
            }
            if (args.variance == "sandwich") {
              require(method == Method::PAPW, Err::ConfigInvalid,
                      "sandwich variance applies to the PAPW route only");
              require(fits.p_all.size() == s.size(), Err::ConfigInvalid,
                      "sandwich variance needs a fitted membership model");
              rep.se = std::sqrt(
                  sandwich_papw(s, pib, fits.p_all, fits.x_qr_all, rep.point).variance);
            } else if (args.variance == "bootstrap") {
              const auto boot = rao_wu_bootstrap(
                  s,
                  [&](const CombinedSample& rep_s) {
                    EstimateArgs a2 = args;
                    a2.variance = "none";
                    a2.strict_pib = false;
                    a2.methods = {cli_method_name(method)};
                    LoadedData d2;
                    d2.sample = rep_s;
                    return run_estimate(a2, d2, nullptr).front().point;
                  },
                  args.boot, args.seed, args.cluster, args.jobs);
              rep.se = std::sqrt(boot.variance);
              rep.n_draws_or_boot = args.boot;
            }
            break;
          }
          case Method::PM: {
            rep.point = pm_estimate(s, split_r(m_all())).point;
            if (args.variance == "bootstrap") {
              const auto boot = rao_wu_bootstrap(
                  s,
                  [&](const CombinedSample& rep_s) {
                    EstimateArgs a2 = args;
                    a2.variance = "none";
                    a2.strict_pib = false;
                    a2.methods = {cli_method_name(method)};
                    LoadedData d2;
                    d2.sample = rep_s;
                    return run_estimate(a2, d2, nullptr).front().point;
                  },
                  args.boot, args.seed, args.cluster, args.jobs);
              rep.se = std::sqrt(boot.variance);
              rep.n_draws_or_boot = args.boot;
            }
            break;
          }
          case Method::AipwPapw:
          case Method::AipwPapp:
          case Method::AipwIpsw: {
            const Vector pib = pib_single();
            const Vector m = m_all();
            const auto normalization = args.population_size > 0 ? Normalization::KnownN
                                                                : Normalization::Hajek;
            rep.point = aipw_plugin(s, pib, split_b(m), split_r(m), normalization).point;
            if (args.variance == "chen" || args.variance == "auto") {
              Vector sigma2 = fits.sigma2_all.size() == s.size()
                                  ? fits.sigma2_all
                                  : Vector::Zero(s.size());
              const auto var = chen_dr_variance(s, pib, m, sigma2);
              rep.se = std::sqrt(var.variance);
              for (const auto& [key, value] : var.components) rep.diagnostics[key] = value;
            } else if (args.variance == "bootstrap") {
              const auto boot = rao_wu_bootstrap(
                  s,
                  [&](const CombinedSample& rep_s) {
                    EstimateArgs a2 = args;
                    a2.variance = "none";
                    a2.strict_pib = false;
                    a2.methods = {cli_method_name(method)};
                    LoadedData d2;
                    d2.sample = rep_s;
                    return run_estimate(a2, d2, nullptr).front().point;
                  },
                  args.boot, args.seed, args.cluster, args.jobs);
              rep.se = std::sqrt(boot.variance);
              rep.n_draws_or_boot = args.boot;
            }
            break;
          }
        }
      } else {
        // Two-step Bayesian route with Rubin combination.
        Matrix pib_draws;
        if (data.given_pib) {
          pib_draws = data.given_pib->transpose();
        } else if (method == Method::PAPW || method == Method::AipwPapw) {
          pib_draws = papw(s, fits.pib_draws).values;
        } else if (method == Method::PAPP || method == Method::AipwPapp) {
          pib_draws = papp(s, *fits.pir_draws, fits.pib_draws).values;
        } else if (method != Method::PM && method != Method::UnweightedB) {
          fail(Err::ConfigInvalid, "method has no two-step Bayesian form");
        }

        if (method == Method::UnweightedB) {
          const Vector yb = s.y_b();
          rep.point = yb.mean();
          rep.se = std::sqrt(sample_variance(yb) / static_cast<double>(yb.size()));
        } else if (method == Method::PAPW || method == Method::PAPP) {
          const Eigen::Index M = pib_draws.rows();
          Vector points(M), withins(M);
          const Vector zero_r = Vector::Zero(s.n_r);
          for (Eigen::Index i = 0; i < M; ++i) {
            const Vector pvec = pib_draws.row(i).transpose();
            Vector w(pvec.size());
            for (Eigen::Index j = 0; j < pvec.size(); ++j) w[j] = 1.0 / pvec[j];
            points[i] = hajek_mean(s.y_b(), w);
            withins[i] = within_variance_parts(s, zero_r, pvec, args.cluster).sb_term;
          }
          const auto var = rubin_combine(points, withins);
          rep.point = points.mean();
          rep.se = std::sqrt(var.variance);
          rep.n_draws_or_boot = M;
          if (weights_out) {
            std::vector<double> col(static_cast<std::size_t>(s.n_b));
            for (Eigen::Index j = 0; j < s.n_b; ++j) {
              double mean_w = 0.0;
              for (Eigen::Index i = 0; i < M; ++i) mean_w += 1.0 / pib_draws(i, j);
              col[static_cast<std::size_t>(j)] = mean_w / static_cast<double>(M);
            }
            (*weights_out)["pseudo_weight"] = col;
          }
        } else if (method == Method::PM) {
          const Matrix& yh = data.given_m_all
                                 ? Matrix(data.given_m_all->transpose())
                                 : fits.y_hat_draws;
          const Eigen::Index M = yh.rows();
          Vector points(M), withins(M);
          const Vector ones_b = Vector::Ones(s.n_b);
          const Vector wr = s.pi_r_r().cwiseInverse();
          for (Eigen::Index i = 0; i < M; ++i) {
            Vector yhat_r(s.n_r);
            for (Eigen::Index j = 0; j < s.n_r; ++j)
              yhat_r[j] = yh(i, idx_r[static_cast<std::size_t>(j)]);
            points[i] = hajek_mean(yhat_r, wr);
            withins[i] = within_variance_parts(s, yhat_r, ones_b, args.cluster).sr_term;
          }
          const auto var = rubin_combine(points, withins);
          rep.point = points.mean();
          rep.se = std::sqrt(var.variance);
          rep.n_draws_or_boot = M;
        } else {
          DrawSet draws;
          draws.M = pib_draws.rows();
          draws.pib_draws = pib_draws;
          if (data.given_m_all) {
            draws.y_imputed = data.given_m_all->transpose().replicate(draws.M, 1);
          } else {
            draws.y_imputed = fits.y_hat_draws;
          }
          require(draws.y_imputed.rows() == draws.M, Err::DrawCountMismatch,
                  "outcome and membership draw counts differ");
          if (method == Method::AipwPapp) draws.pir_pred_draws = fits.pir_draws;
          const auto route = method == Method::AipwPapp ? BayesRoute::PappUnknownPir
                                                        : BayesRoute::PapwKnownPir;
          const BayesAipwResult res = aipw_bayes(s, draws, route);
          Vector withins(draws.M);
          for (Eigen::Index i = 0; i < draws.M; ++i) {
            Vector yhat_r(s.n_r);
            for (Eigen::Index j = 0; j < s.n_r; ++j)
              yhat_r[j] = draws.y_imputed(i, idx_r[static_cast<std::size_t>(j)]);
            withins[i] = within_variance_approx(s, yhat_r, draws.pib_draws.row(i).transpose(),
                                                args.cluster);
          }
          const auto var = rubin_combine(res.per_draw, withins);
          rep.point = res.point;
          rep.se = std::sqrt(var.variance);
          rep.n_draws_or_boot = draws.M;
        }
      }
    } catch (const Error&) {
      throw;
    }
    if (rep.n_draws_or_boot == 0 && bayes) rep.n_draws_or_boot = args.m;
    rep.finalize_ci();
    reports.push_back(std::move(rep));
  }
  return reports;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"doubly robust estimation for non-probability samples"};
  app.require_subcommand(1);
  app.set_config("--config", "", "flat key=value config file; flags override");

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "run a simulation-study scenario");
  simulate->add_option("--scenario", sim.scenario, "sim1 | sim2 | sim3");
  simulate->add_option("--rho", sim.rho, "design correlation");
  simulate->add_option("--fk", sim.fk, "sim2 mean function: SIN | EXP | SQR");
  simulate->add_option("--k", sim.k, "replications");
  simulate->add_option("--seed", sim.seed, "top-level seed");
  simulate->add_option("--jobs", sim.jobs, "replication worker pool size");
  simulate->add_option("-o,--out", sim.out_path, "output path (stdout when omitted)");
  simulate->add_option("--format", sim.format, "csv | json");
  simulate->add_option("--engine", sim.engine, "glm | bart");
  simulate->add_flag("--bayes", sim.bayes, "two-step Bayesian inference");
  simulate->add_option("--m", sim.m, "posterior subsample size");
  simulate->add_option("--b", sim.boot, "bootstrap replicates (0 = analytic variance)");
  simulate->add_option("--n", sim.n, "population size (sims 1-2)");
  simulate->add_option("--n-r", sim.n_r, "expected reference sample size");
  simulate->add_option("--n-b", sim.n_b, "expected non-probability sample size");
  simulate->add_option("--clusters", sim.clusters, "sim3 cluster count");
  simulate->add_option("--n-alpha", sim.n_alpha, "sim3 cluster size");
  simulate->add_option("--n-r-psu", sim.n_r_psu, "sim3 expected reference PSUs");
  simulate->add_option("--n-b-psu", sim.n_b_psu, "sim3 expected non-probability PSUs");
  simulate->add_flag("--binary", sim.binary, "use the binary outcome (sim3)");
  simulate->add_option("--methods", sim.methods, "method list")->delimiter(',');
  simulate->add_option("--specs", sim.specs, "model specs, e.g. TT,FF")->delimiter(',');
  simulate->add_flag("--fixed-population", sim.fixed_population,
                     "generate the population once instead of per replication");
  simulate->add_option("--mcmc-draws", sim.mcmc_draws, "kept GLM MCMC draws");
  simulate->add_option("--mcmc-burn", sim.mcmc_burn, "GLM MCMC burn-in");
  simulate->add_option("--bart-burn", sim.bart_burn, "BART burn-in sweeps");
  simulate->add_option("--bart-thin", sim.bart_thin, "BART sweeps between kept states");
  simulate->add_option("--bart-trees", sim.bart_trees, "BART trees (continuous)");
  simulate->add_option("--bart-trees-probit", sim.bart_trees_probit, "BART trees (probit)");

  EstimateArgs est;
  auto* estimate = app.add_subcommand("estimate", "estimate from combined CSV data");
  estimate->add_option("--data", est.data_path, "combined CSV with a z column");
  estimate->add_option("--reference", est.reference_path, "reference-sample CSV");
  estimate->add_option("--nonprob", est.nonprob_path, "non-probability-sample CSV");
  estimate->add_option("--method", est.methods, "estimator(s)")->delimiter(',');
  estimate->add_option("--engine", est.engine, "glm | bart");
  estimate->add_option("--variance", est.variance,
                       "auto | sandwich | chen | bootstrap | rubin | none");
  estimate->add_option("--m", est.m, "posterior subsample size (rubin)");
  estimate->add_option("--b", est.boot, "bootstrap replicates");
  estimate->add_option("--seed", est.seed, "seed");
  estimate->add_option("--jobs", est.jobs, "bootstrap worker pool size");
  estimate->add_option("--population-size", est.population_size, "known N");
  estimate->add_flag("--binary", est.binary, "binary outcome");
  estimate->add_flag("--cluster", est.cluster, "cluster-aware bootstrap / within terms");
  estimate->add_option("--qr-covariates", est.qr_covariates, "x | xstar | auto");
  estimate->add_option("--pm-covariates", est.pm_covariates, "x | xstar | lwp | auto");
  estimate->add_option("--mcmc-draws", est.mcmc_draws, "kept GLM MCMC draws");
  estimate->add_option("--mcmc-burn", est.mcmc_burn, "GLM MCMC burn-in");
  estimate->add_option("--bart-burn", est.bart_burn, "BART burn-in sweeps");
  estimate->add_option("--bart-thin", est.bart_thin, "BART thinning");
  estimate->add_option("--bart-trees", est.bart_trees, "BART trees (continuous)");
  estimate->add_option("--bart-trees-probit", est.bart_trees_probit, "BART trees (probit)");
  estimate->add_option("--given-pib", est.given_pib_col,
                       "CSV column with externally fitted pseudo-inclusion probabilities");
  estimate->add_option("--given-pm", est.given_pm_col,
                       "CSV column with externally fitted outcome predictions");
  estimate->add_option("-o,--out", est.out_path, "output JSON path (stdout when omitted)");
  estimate->add_option("--export-weights", est.export_weights_path,
                       "write the S_B rows with a pseudo_weight column");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  }

  if (simulate->parsed()) return cmd_simulate(sim);
  if (estimate->parsed()) return cmd_estimate(est);
  return kExitConfig;
}
