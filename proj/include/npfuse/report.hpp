#pragma once

#include <string>
#include <vector>

#include "npfuse/estimators.hpp"
#include "npfuse/metrics.hpp"

namespace npfuse {

// Table column order follows the paper-style displays:
// method,spec,rbias,rmse,crci,rse,k_eff
std::string metrics_to_csv(const std::vector<MetricsRow>& rows);
std::string metrics_to_json(const std::vector<MetricsRow>& rows);

// Versioned JSON estimate report (schema_version 1).
std::string report_to_json(const std::vector<EstimateReport>& reports);

}  // namespace npfuse
