#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "npfuse/csv.hpp"
#include "npfuse/sim_studies.hpp"

namespace fs = std::filesystem;
using namespace npfuse;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr
};

RunResult run_cli(const std::string& args) {
  const std::string cmd = std::string(NPFUSE_CLI_PATH) + " " + args + " 2>&1";
  RunResult res;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) res.output.append(buf, n);
  const int status = pclose(pipe);
  res.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return res;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("npfuse_cli_test_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("simulate writes the documented csv and is byte-stable") {
  TempDir tmp;
  const fs::path out = tmp.path / "out.csv";
  const std::string args = "simulate --scenario sim1 --rho 0.5 --k 3 --seed 1 --n 50000 "
                           "--n-b 300 --methods unweighted,pm,aipw-ipsw --specs TT -o " +
                           out.string();
  const RunResult a = run_cli(args);
  CHECK(a.exit_code == 0);
  const std::string first = slurp(out);
  CHECK(first.rfind("method,spec,rbias,rmse,crci,rse,k_eff\n", 0) == 0);
  CHECK(first.find("GLM-PM,T,") != std::string::npos);

  const RunResult b = run_cli(args);
  CHECK(b.exit_code == 0);
  CHECK(slurp(out) == first);

  const RunResult c = run_cli(args + " --jobs 4");
  CHECK(c.exit_code == 0);
  CHECK(slurp(out) == first);
}

TEST_CASE("unknown scenario names the valid ones and writes nothing") {
  TempDir tmp;
  const fs::path out = tmp.path / "never.csv";
  const RunResult res = run_cli("simulate --scenario simX -o " + out.string());
  CHECK(res.exit_code == 1);
  CHECK(res.output.find("sim1") != std::string::npos);
  CHECK(res.output.find("sim3") != std::string::npos);
  CHECK_FALSE(fs::exists(out));
}

TEST_CASE("a cell failure yields exit code 2") {
  TempDir tmp;
  const fs::path out = tmp.path / "partial.csv";
  // IPSW has no two-step Bayesian form, so its cell fails while others run.
  const RunResult res =
      run_cli("simulate --scenario sim1 --bayes --methods ipsw,unweighted --specs TT --k 1 "
              "--n 50000 --n-b 200 --m 20 --mcmc-draws 50 --mcmc-burn 50 --seed 2 -o " +
              out.string());
  CHECK(res.exit_code == 2);
  CHECK(fs::exists(out));
}

TEST_CASE("estimate reproduces the hand-computed toy point from csv files") {
  TempDir tmp;
  const fs::path ref = tmp.path / "ref.csv";
  const fs::path npb = tmp.path / "npb.csv";
  {
    std::ofstream f(ref);
    f << "id,y,pi_r,z,m_hat\n";
    f << "r1,,0.5,0,2.0\n";
    f << "r2,,0.5,0,2.0\n";
  }
  {
    std::ofstream f(npb);
    f << "id,y,pi_r,z,pib,m_hat\n";
    f << "b1,1.0,0.5,1,0.5,1.0\n";
    f << "b2,3.0,0.25,1,0.25,2.0\n";
  }
  const fs::path out = tmp.path / "report.json";
  const RunResult res = run_cli("estimate --reference " + ref.string() + " --nonprob " +
                                npb.string() +
                                " --method aipw-papw --variance none --given-pib pib "
                                "--given-pm m_hat --population-size 8 -o " +
                                out.string());
  INFO(res.output);
  REQUIRE(res.exit_code == 0);
  const auto j = nlohmann::json::parse(slurp(out));
  CHECK(j["schema_version"] == 1);
  REQUIRE(j["estimates"].size() == 1);
  CHECK(std::abs(j["estimates"][0]["point"].get<double>() - 1.5) < 1e-10);
}

TEST_CASE("estimate surfaces a missing outcome column") {
  TempDir tmp;
  const fs::path ref = tmp.path / "ref.csv";
  const fs::path npb = tmp.path / "npb.csv";
  {
    std::ofstream f(ref);
    f << "id,y,pi_r,z,x_1\nr1,,0.5,0,0.1\nr2,,0.4,0,0.2\n";
  }
  {
    std::ofstream f(npb);
    f << "id,pi_r,z,x_1\nb1,0.5,1,0.3\nb2,0.25,1,0.4\n";  // no y column
  }
  const RunResult res = run_cli("estimate --reference " + ref.string() + " --nonprob " +
                                npb.string() + " --method pm --variance none");
  CHECK(res.exit_code == 1);
  CHECK(res.output.find("y") != std::string::npos);
}

TEST_CASE("estimate runs the two-step Bayesian route on exported study data") {
  TempDir tmp;
  const PopulationTruth pop = gen_sim1(100000, 0.5, 77, 100, 300);
  const auto rows_r = poisson_sample(pop, PiField::R, 5);
  const auto rows_b = poisson_sample(pop, PiField::B, 6);
  const fs::path ref = tmp.path / "ref.csv";
  const fs::path npb = tmp.path / "npb.csv";
  write_units_csv_file(ref.string(), rows_r);
  write_units_csv_file(npb.string(), rows_b);

  const fs::path out = tmp.path / "report.json";
  const fs::path weights = tmp.path / "weights.csv";
  const RunResult res = run_cli(
      "estimate --reference " + ref.string() + " --nonprob " + npb.string() +
      " --method papp,aipw-papp --variance rubin --m 50 --mcmc-draws 100 --mcmc-burn 100 "
      "--seed 3 --export-weights " + weights.string() + " -o " + out.string());
  INFO(res.output);
  REQUIRE(res.exit_code == 0);
  const auto j = nlohmann::json::parse(slurp(out));
  REQUIRE(j["estimates"].size() == 2);
  for (const auto& e : j["estimates"]) {
    CHECK(e["n_draws_or_boot"] == 50);
    CHECK(e["se"].get<double>() > 0.0);
    const double point = e["point"].get<double>();
    CHECK(std::abs(point - pop.true_mean) / pop.true_mean < 0.5);
  }
  // Pseudo-weight export carries one weight per S_B row.
  const UnitsCsv exported = read_units_csv_file(weights.string());
  CHECK(exported.rows.size() == rows_b.size());
  CHECK(exported.extra.count("pseudo_weight") == 1);
}

TEST_CASE("estimate accepts a single combined csv with a z column") {
  TempDir tmp;
  const fs::path data = tmp.path / "combined.csv";
  {
    std::ofstream f(data);
    f << "id,y,pi_r,z,x_1\n";
    f << "b1,2.0,,1,0.5\n";
    f << "b2,4.0,,1,1.5\n";
    f << "b3,3.0,,1,1.0\n";
    f << "r1,,0.2,0,0.6\n";
    f << "r2,,0.4,0,1.2\n";
    f << "r3,,0.3,0,0.9\n";
  }
  const RunResult res =
      run_cli("estimate --data " + data.string() + " --method unweighted,pm --variance none");
  INFO(res.output);
  REQUIRE(res.exit_code == 0);
  const auto j = nlohmann::json::parse(res.output);
  CHECK(j["estimates"][0]["point"].get<double>() == doctest::Approx(3.0));
}

TEST_CASE("lwp covariates fold the reference weight into the outcome model") {
  TempDir tmp;
  const fs::path data = tmp.path / "combined.csv";
  {
    std::ofstream f(data);
    f << "id,y,pi_r,z,x_1\n";
    // pi_r present on both sides so the weight is available as a predictor
    f << "b1,2.0,0.5,1,0.5\n";
    f << "b2,4.0,0.25,1,1.5\n";
    f << "b3,3.0,0.2,1,1.0\n";
    f << "b4,5.0,0.4,1,2.0\n";
    f << "r1,,0.2,0,0.6\n";
    f << "r2,,0.4,0,1.2\n";
    f << "r3,,0.3,0,0.9\n";
  }
  const RunResult res = run_cli("estimate --data " + data.string() +
                                " --method pm --pm-covariates lwp --variance none");
  INFO(res.output);
  REQUIRE(res.exit_code == 0);
  const auto j = nlohmann::json::parse(res.output);
  CHECK(std::isfinite(j["estimates"][0]["point"].get<double>()));
}
