#include "npfuse/csv.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace npfuse {

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  for (char c : line) {
    if (c == ',') {
      out.push_back(field);
      field.clear();
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  out.push_back(field);
  return out;
}

double parse_number(const std::string& s, std::size_t line_no, const std::string& src) {
  const char* b = s.data();
  const char* e = b + s.size();
  double v = 0.0;
  auto res = std::from_chars(b, e, v);
  if (res.ec != std::errc() || res.ptr != e)
    fail(Err::CsvParse, src + " row " + std::to_string(line_no) + ": bad number '" + s + "'");
  return v;
}

std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

UnitsCsv read_units_csv(std::istream& in, const std::string& src) {
  std::string line;
  if (!std::getline(in, line)) fail(Err::CsvParse, src + ": empty file");
  const auto header = split_line(line);

  enum class Kind { Id, Cluster, Y, PiR, Z, X, D, Extra };
  struct Col {
    Kind kind;
    std::string name;
  };
  std::vector<Col> cols;
  Eigen::Index n_x = 0, n_d = 0;
  for (const auto& h : header) {
    if (h == "id") cols.push_back({Kind::Id, h});
    else if (h == "cluster") cols.push_back({Kind::Cluster, h});
    else if (h == "y") cols.push_back({Kind::Y, h});
    else if (h == "pi_r") cols.push_back({Kind::PiR, h});
    else if (h == "z") cols.push_back({Kind::Z, h});
    else if (h.rfind("x_", 0) == 0) { cols.push_back({Kind::X, h}); ++n_x; }
    else if (h.rfind("d_", 0) == 0) { cols.push_back({Kind::D, h}); ++n_d; }
    else cols.push_back({Kind::Extra, h});
  }

  UnitsCsv out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto fields = split_line(line);
    if (fields.size() != cols.size())
      fail(Err::CsvParse, src + " row " + std::to_string(line_no) + ": expected " +
                              std::to_string(cols.size()) + " fields, got " +
                              std::to_string(fields.size()));
    UnitRecord r;
    r.x = Vector(n_x);
    Vector d(n_d);
    bool has_d = false;
    Eigen::Index ix = 0, id_ = 0;
    for (std::size_t c = 0; c < cols.size(); ++c) {
      const std::string& f = fields[c];
      const bool empty = f.empty();
      switch (cols[c].kind) {
        case Kind::Id:
          if (empty) fail(Err::CsvParse, src + " row " + std::to_string(line_no) + ": empty id");
          r.id = f;
          break;
        case Kind::Cluster:
          if (!empty) r.cluster_id = f;
          break;
        case Kind::Y:
          if (!empty) r.y = parse_number(f, line_no, src);
          break;
        case Kind::PiR:
          if (!empty) r.pi_r = parse_number(f, line_no, src);
          break;
        case Kind::Z:
          if (!empty) r.z = static_cast<int>(parse_number(f, line_no, src));
          break;
        case Kind::X:
          if (empty)
            fail(Err::CsvParse, src + " row " + std::to_string(line_no) + ": empty cell in " +
                                    cols[c].name);
          r.x[ix++] = parse_number(f, line_no, src);
          break;
        case Kind::D:
          if (!empty) {
            d[id_++] = parse_number(f, line_no, src);
            has_d = true;
          }
          break;
        case Kind::Extra: {
          auto& col = out.extra[cols[c].name];
          col.resize(out.rows.size());
          col.push_back(empty ? std::optional<double>{} : parse_number(f, line_no, src));
          break;
        }
      }
    }
    if (has_d) {
      if (id_ != n_d)
        fail(Err::CsvParse, src + " row " + std::to_string(line_no) + ": partial d_* row");
      r.d = d;
    }
    out.rows.push_back(std::move(r));
  }
  for (auto& [name, col] : out.extra) col.resize(out.rows.size());
  return out;
}

UnitsCsv read_units_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(Err::CsvParse, "cannot open '" + path + "'");
  return read_units_csv(in, path);
}

void write_units_csv(std::ostream& out, const std::vector<UnitRecord>& rows,
                     const std::map<std::string, std::vector<double>>& extra) {
  const Eigen::Index n_x = rows.empty() ? 0 : rows.front().x.size();
  const Eigen::Index n_d = rows.empty() || !rows.front().d ? 0 : rows.front().d->size();
  out << "id,cluster,y,pi_r,z";
  for (Eigen::Index j = 0; j < n_x; ++j) out << ",x_" << (j + 1);
  for (Eigen::Index j = 0; j < n_d; ++j) out << ",d_" << (j + 1);
  for (const auto& [name, col] : extra) {
    require(col.size() == rows.size(), Err::LengthMismatch, "extra column '" + name + "'");
    out << ',' << name;
  }
  out << '\n';
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    out << r.id << ',' << (r.cluster_id ? *r.cluster_id : "") << ','
        << (r.y ? format_number(*r.y) : "") << ',' << (r.pi_r ? format_number(*r.pi_r) : "")
        << ',' << r.z;
    for (Eigen::Index j = 0; j < n_x; ++j) out << ',' << format_number(r.x[j]);
    for (Eigen::Index j = 0; j < n_d; ++j)
      out << ',' << (r.d ? format_number((*r.d)[j]) : "");
    for (const auto& [name, col] : extra) out << ',' << format_number(col[i]);
    out << '\n';
  }
}

void write_units_csv_file(const std::string& path, const std::vector<UnitRecord>& rows,
                          const std::map<std::string, std::vector<double>>& extra) {
  std::ofstream out(path);
  if (!out) fail(Err::CsvParse, "cannot open '" + path + "' for writing");
  write_units_csv(out, rows, extra);
}

}  // namespace npfuse
