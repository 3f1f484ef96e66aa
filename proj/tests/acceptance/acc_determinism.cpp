// Determinism suite: commands and variance estimators reproduce byte-
// identical output under fixed seeds across worker-pool sizes 1 / 4 / 8.

#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "acceptance.hpp"
#include "npfuse/csv.hpp"
#include "npfuse/glm.hpp"
#include "npfuse/sim_studies.hpp"
#include "npfuse/variance.hpp"

namespace fs = std::filesystem;
using namespace npfuse;

namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string(NPFUSE_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  return std::system(cmd.c_str());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

}  // namespace

int main() {
  Acceptance acc;
  const fs::path tmp = fs::temp_directory_path() / "npfuse_acc_determinism";
  fs::create_directories(tmp);

  {
    // simulate across jobs 1/4/8, including a cluster bootstrap.
    const std::string base =
        "simulate --scenario sim3 --rho 0.8 --clusters 100 --n-alpha 50 --n-r-psu 50 "
        "--n-b-psu 20 --k 4 --b 30 --seed 7 --methods papw,aipw-papw --specs FF -o ";
    const fs::path f1 = tmp / "sim_j1.csv", f4 = tmp / "sim_j4.csv", f8 = tmp / "sim_j8.csv";
    bool ok = run_cli(base + f1.string() + " --jobs 1") == 0 &&
              run_cli(base + f4.string() + " --jobs 4") == 0 &&
              run_cli(base + f8.string() + " --jobs 8") == 0;
    const std::string a = slurp(f1);
    ok = ok && !a.empty() && a == slurp(f4) && a == slurp(f8);
    acc.check(ok, "simulate output byte-identical across --jobs 1/4/8",
              fmt("%zu bytes compared", a.size()));
  }

  {
    // estimate with bootstrap variance across jobs 1/4/8.
    const PopulationTruth pop = gen_sim1(200000, 0.5, 10, 100, 300);
    const auto rows_r = poisson_sample(pop, PiField::R, 1);
    const auto rows_b = poisson_sample(pop, PiField::B, 2);
    const fs::path ref = tmp / "ref.csv", npb = tmp / "npb.csv";
    write_units_csv_file(ref.string(), rows_r);
    write_units_csv_file(npb.string(), rows_b);
    const std::string base = "estimate --reference " + ref.string() + " --nonprob " +
                             npb.string() +
                             " --method aipw-papw --variance bootstrap --b 50 --seed 3 -o ";
    const fs::path f1 = tmp / "est_j1.json", f4 = tmp / "est_j4.json", f8 = tmp / "est_j8.json";
    bool ok = run_cli(base + f1.string() + " --jobs 1") == 0 &&
              run_cli(base + f4.string() + " --jobs 4") == 0 &&
              run_cli(base + f8.string() + " --jobs 8") == 0;
    const std::string a = slurp(f1);
    ok = ok && !a.empty() && a == slurp(f4) && a == slurp(f8);
    acc.check(ok, "estimate bootstrap output byte-identical across --jobs 1/4/8",
              fmt("%zu bytes compared", a.size()));
  }

  {
    // Library-level: the rescaling bootstrap is replicate-stream derived.
    const PopulationTruth pop = gen_sim1(50000, 0.5, 11, 100, 300);
    const auto rows_r = poisson_sample(pop, PiField::R, 3);
    const auto rows_b = poisson_sample(pop, PiField::B, 4);
    const CombinedSample s = build_combined(rows_r, rows_b);
    auto est = [](const CombinedSample& rep) {
      double num = 0.0, den = 0.0;
      for (const auto& r : rep.records)
        if (r.z == 1 && r.pi_r) {
          num += *r.y / *r.pi_r;
          den += 1.0 / *r.pi_r;
        }
      return num / den;
    };
    const double v1 = rao_wu_bootstrap(s, est, 200, 99, false, 1).variance;
    const double v4 = rao_wu_bootstrap(s, est, 200, 99, false, 4).variance;
    const double v8 = rao_wu_bootstrap(s, est, 200, 99, false, 8).variance;
    acc.check(v1 == v4 && v1 == v8, "rescaling bootstrap bit-identical across 1/4/8 workers",
              fmt("variance = %.17g", v1));
  }

  {
    // Posterior sampling is bit-reproducible from its seed.
    Rng rng(12);
    const int n = 60;
    Matrix x(n, 2);
    Vector y(n);
    for (int i = 0; i < n; ++i) {
      x(i, 0) = 1.0;
      x(i, 1) = rng.normal();
      y[i] = 1.0 + x(i, 1) + rng.normal();
    }
    PosteriorConfig cfg;
    cfg.n_draws = 200;
    cfg.burn_in = 200;
    cfg.seed = 77;
    const PosteriorDraws a = posterior_sample(Family::Linear, x, y, cfg);
    const PosteriorDraws b = posterior_sample(Family::Linear, x, y, cfg);
    acc.check(a.draws == b.draws, "posterior sampler bit-reproducible from its seed",
              fmt("%lld draws compared", static_cast<long long>(a.n_draws())));
  }

  fs::remove_all(tmp);
  return acc.exit_code();
}
