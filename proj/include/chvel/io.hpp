#pragma once

#include "chvel/grid.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace chvel {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Full-precision scientific notation; parses back to the identical double.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.16e", v);
  return buf;
}

inline double parse_double(const std::string& s) {
  const char* begin = s.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0') throw FormatError("not a number: '" + s + "'");
  return v;
}

inline long parse_long(const std::string& s) {
  const char* begin = s.c_str();
  char* end = nullptr;
  const long v = std::strtol(begin, &end, 10);
  if (end == begin || *end != '\0') throw FormatError("not an integer: '" + s + "'");
  return v;
}

inline std::vector<std::string> split(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  return out;
}

/// Header line shared by every emitted table:
///   # <schema> v<version> columns=<c1,c2,...> [key=value ...]
inline std::string table_header(const std::string& schema, int version, const std::string& columns,
                                const std::string& extra = {}) {
  std::string h = "# " + schema + " v" + std::to_string(version) + " columns=" + columns;
  if (!extra.empty()) h += " " + extra;
  return h;
}

/// Value of key=... in a header line, or empty.
inline std::string header_value(const std::string& header, const std::string& key) {
  std::istringstream is(header);
  std::string tok;
  const std::string prefix = key + "=";
  while (is >> tok) {
    if (tok.rfind(prefix, 0) == 0) return tok.substr(prefix.size());
  }
  return {};
}

inline std::ofstream open_output(const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  return os;
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  return is;
}

// --- CoupledField text format --------------------------------------------

inline constexpr const char* kFieldSchema = "chvel.field";

/// One row per node: bulk rows for every grid node, then surface rows for
/// the wall nodes.
inline void write_field(std::ostream& os, const CoupledField& f) {
  const Grid& g = *f.grid();
  os << table_header(kFieldSchema, 1, "node_kind,ix,iy,value",
                     "nx=" + std::to_string(g.nx()) + " ny=" + std::to_string(g.ny()))
     << '\n';
  for (int k = 0; k < g.node_count(); ++k) {
    os << "bulk," << g.ix(k) << ',' << g.iy(k) << ',' << format_double(f.bulk()[k]) << '\n';
  }
  const Vector s = f.surface();
  for (int i = 0; i < g.surface_count(); ++i) {
    const int k = g.surface_to_node(i);
    os << "surface," << g.ix(k) << ',' << g.iy(k) << ',' << format_double(s[i]) << '\n';
  }
}

/// Reads a field written by write_field. Surface rows must match the bulk
/// values at the wall nodes exactly.
inline CoupledField read_field(std::istream& is, const GridPtr& grid) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("# chvel.field", 0) != 0) throw FormatError("field: missing header");
  const Grid& g = *grid;
  if (header_value(line, "nx") != std::to_string(g.nx()) || header_value(line, "ny") != std::to_string(g.ny())) {
    throw GridMismatch("field: grid dimensions in header do not match");
  }
  Vector v = Vector::Constant(g.node_count(), std::numeric_limits<double>::quiet_NaN());
  std::vector<std::pair<int, double>> surf;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto cols = split(line);
    if (cols.size() != 4) throw FormatError("field: expected 4 columns in '" + line + "'");
    const int i = static_cast<int>(parse_long(cols[1]));
    const int j = static_cast<int>(parse_long(cols[2]));
    if (i < 0 || i >= g.nx() || j < 0 || j >= g.ny()) throw FormatError("field: node out of range");
    const double val = parse_double(cols[3]);
    if (cols[0] == "bulk") {
      v[g.index(i, j)] = val;
    } else if (cols[0] == "surface") {
      if (!g.is_wall_row(j)) throw FormatError("field: surface row off the walls");
      surf.emplace_back(g.index(i, j), val);
    } else {
      throw FormatError("field: unknown node kind '" + cols[0] + "'");
    }
  }
  if (!v.allFinite()) throw FormatError("field: missing bulk rows");
  for (const auto& [k, val] : surf) {
    if (val != v[k]) throw FormatError("field: surface value differs from the bulk trace");
  }
  return {grid, std::move(v)};
}

}  // namespace chvel
