#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "npfuse/data_model.hpp"

namespace npfuse {

// Parsed CSV per the ingestion contract: header row with reserved names
// `id, cluster, y, pi_r, z`; columns prefixed `x_` map to x and `d_` to d;
// an empty cell means the optional field is absent. Unreserved columns are
// kept verbatim in `extra` so callers can pass precomputed quantities
// (e.g. externally fitted weights) through the same file.
struct UnitsCsv {
  std::vector<UnitRecord> rows;
  std::map<std::string, std::vector<std::optional<double>>> extra;
};

UnitsCsv read_units_csv(std::istream& in, const std::string& source_name = "<stream>");
UnitsCsv read_units_csv_file(const std::string& path);

void write_units_csv(std::ostream& out, const std::vector<UnitRecord>& rows,
                     const std::map<std::string, std::vector<double>>& extra = {});
void write_units_csv_file(const std::string& path, const std::vector<UnitRecord>& rows,
                          const std::map<std::string, std::vector<double>>& extra = {});

}  // namespace npfuse
