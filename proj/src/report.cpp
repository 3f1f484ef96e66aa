#include "npfuse/report.hpp"

#include <cmath>
#include <cstdio>

#include <json.hpp>

namespace npfuse {

namespace {

std::string num(double v, const char* fmt = "%.6g") {
  if (std::isnan(v)) return "nan";
  char buf[48];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

}  // namespace

std::string metrics_to_csv(const std::vector<MetricsRow>& rows) {
  std::string out = "method,spec,rbias,rmse,crci,rse,k_eff\n";
  for (const auto& r : rows) {
    out += r.method;
    out += ',';
    out += r.spec;
    out += ',';
    out += num(r.summary.rbias_pct);
    out += ',';
    out += num(r.summary.rmse_pct);
    out += ',';
    out += num(r.summary.crci_pct);
    out += ',';
    out += num(r.summary.rse);
    out += ',';
    out += std::to_string(r.summary.k_effective);
    out += '\n';
  }
  return out;
}

std::string metrics_to_json(const std::vector<MetricsRow>& rows) {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["columns"] = {"rbias", "rmse", "crci", "rse"};
  auto& arr = j["rows"] = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json row;
    row["method"] = r.method;
    row["spec"] = r.spec;
    row["rbias"] = r.summary.rbias_pct;
    row["rmse"] = r.summary.rmse_pct;
    row["crci"] = r.summary.crci_pct;
    row["rse"] = r.summary.rse;
    row["k_eff"] = r.summary.k_effective;
    row["truth"] = r.summary.truth;
    row["ok"] = r.ok;
    if (!r.ok && !r.first_error.empty()) row["error"] = r.first_error;
    arr.push_back(std::move(row));
  }
  return j.dump(2) + "\n";
}

std::string report_to_json(const std::vector<EstimateReport>& reports) {
  nlohmann::json j;
  j["schema_version"] = 1;
  auto& arr = j["estimates"] = nlohmann::json::array();
  for (const auto& r : reports) {
    nlohmann::json e;
    e["method"] = r.method;
    e["point"] = r.point;
    e["se"] = r.se;
    e["ci95"] = {r.ci95.first, r.ci95.second};
    e["n_draws_or_boot"] = r.n_draws_or_boot;
    nlohmann::json diag = nlohmann::json::object();
    for (const auto& [key, value] : r.diagnostics) diag[key] = value;
    e["diagnostics"] = std::move(diag);
    arr.push_back(std::move(e));
  }
  return j.dump(2) + "\n";
}

}  // namespace npfuse
