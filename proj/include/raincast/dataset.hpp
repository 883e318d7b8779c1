#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "raincast/dates.hpp"
#include "raincast/tensor.hpp"

namespace raincast::data {

/// Grid geometry, variable roster, date range, and provenance of a dataset.
/// Dates must be contiguous at daily resolution within each seasonal block;
/// blocks may be separated by gaps (e.g. monsoon seasons of successive
/// years), which sequencing never spans.
struct DatasetManifest {
  int grid_rows = 0;
  int grid_cols = 0;
  std::vector<std::string> variables;
  Date date_start;
  Date date_end;
  std::string city;
  std::string provenance = "ingested";  // ingested | synthetic

  void validate() const {
    if (grid_rows < 1 || grid_cols < 1)
      throw std::invalid_argument("manifest: grid dims must be positive");
    if (variables.empty()) throw std::invalid_argument("manifest: no variables");
    for (std::size_t i = 0; i < variables.size(); ++i)
      for (std::size_t j = i + 1; j < variables.size(); ++j)
        if (variables[i] == variables[j])
          throw std::invalid_argument("manifest: duplicate variable '" + variables[i] + "'");
    if (date_end < date_start) throw std::invalid_argument("manifest: date range reversed");
  }
};

/// Per-date stack of H x W x F values. Channel names start as the manifest
/// variables; feature engineering appends lag and delta channels and bumps
/// `warmup`, the index of the first day on which every channel is valid.
struct FeatureCube {
  int rows = 0;
  int cols = 0;
  std::vector<std::string> channels;
  std::vector<Date> dates;
  std::vector<double> values;  // [day][row][col][channel]
  int warmup = 0;

  int days() const { return static_cast<int>(dates.size()); }
  int width() const { return static_cast<int>(channels.size()); }

  std::int64_t index(int d, int r, int c, int ch) const {
    return ((static_cast<std::int64_t>(d) * rows + r) * cols + c) * width() + ch;
  }
  double& at(int d, int r, int c, int ch) { return values[index(d, r, c, ch)]; }
  double at(int d, int r, int c, int ch) const { return values[index(d, r, c, ch)]; }

  int channel_of(const std::string& name) const {
    auto it = std::find(channels.begin(), channels.end(), name);
    if (it == channels.end())
      throw std::invalid_argument("cube: no channel named '" + name + "'");
    return static_cast<int>(it - channels.begin());
  }

  /// Mean over the grid of one channel on one day.
  double area_mean(int d, int ch) const {
    double s = 0.0;
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) s += at(d, r, c, ch);
    return s / (static_cast<double>(rows) * cols);
  }
};

// ---------------------------------------------------------------------------
// Manifest key-value file: grid_rows, grid_cols, variables (comma list),
// date_start, date_end, city, provenance.
// ---------------------------------------------------------------------------

inline DatasetManifest parse_manifest(std::istream& in) {
  DatasetManifest m;
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("manifest line " + std::to_string(lineno) + ": expected key=value");
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    auto trim = [](std::string& s) {
      s.erase(0, s.find_first_not_of(" \t\r"));
      s.erase(s.find_last_not_of(" \t\r") + 1);
    };
    trim(key);
    trim(val);
    if (!kv.emplace(key, val).second)
      throw std::invalid_argument("manifest: duplicate key '" + key + "'");
  }
  auto need = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw std::invalid_argument("manifest: missing key '" + key + "'");
    return it->second;
  };
  m.grid_rows = std::stoi(need("grid_rows"));
  m.grid_cols = std::stoi(need("grid_cols"));
  std::stringstream vars(need("variables"));
  std::string v;
  while (std::getline(vars, v, ',')) {
    v.erase(0, v.find_first_not_of(" \t"));
    v.erase(v.find_last_not_of(" \t") + 1);
    if (!v.empty()) m.variables.push_back(v);
  }
  m.date_start = Date::parse(need("date_start"));
  m.date_end = Date::parse(need("date_end"));
  m.city = kv.count("city") ? kv["city"] : "";
  m.provenance = kv.count("provenance") ? kv["provenance"] : "ingested";
  m.validate();
  return m;
}

inline DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest '" + path + "'");
  return parse_manifest(in);
}

inline void write_manifest(const DatasetManifest& m, std::ostream& out) {
  out << "grid_rows=" << m.grid_rows << "\n";
  out << "grid_cols=" << m.grid_cols << "\n";
  out << "variables=";
  for (std::size_t i = 0; i < m.variables.size(); ++i)
    out << (i ? "," : "") << m.variables[i];
  out << "\n";
  out << "date_start=" << m.date_start.iso() << "\n";
  out << "date_end=" << m.date_end.iso() << "\n";
  out << "city=" << m.city << "\n";
  out << "provenance=" << m.provenance << "\n";
}

// ---------------------------------------------------------------------------
// Long-format CSV ingestion: header `date,row,col,variable,value`. Every
// (date,row,col,variable) combination must appear exactly once.
// ---------------------------------------------------------------------------

inline FeatureCube ingest_csv(const DatasetManifest& manifest, std::istream& in) {
  manifest.validate();
  FeatureCube cube;
  cube.rows = manifest.grid_rows;
  cube.cols = manifest.grid_cols;
  cube.channels = manifest.variables;

  const long start = manifest.date_start.serial();
  const long end = manifest.date_end.serial();
  const int n_days = static_cast<int>(end - start + 1);
  cube.dates.reserve(n_days);
  for (int d = 0; d < n_days; ++d) cube.dates.push_back(Date::from_serial(start + d));
  cube.values.assign(static_cast<std::size_t>(n_days) * cube.rows * cube.cols * cube.width(), 0.0);
  std::vector<char> seen(cube.values.size(), 0);

  std::map<std::string, int> channel_ix;
  for (int i = 0; i < cube.width(); ++i) channel_ix[cube.channels[i]] = i;

  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("csv: empty file");
  // tolerate an optional UTF-8 BOM before the header
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "date,row,col,variable,value")
    throw std::invalid_argument("csv: expected header 'date,row,col,variable,value', got '" +
                                line + "'");

  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string date_s, row_s, col_s, var_s, val_s;
    if (!std::getline(ss, date_s, ',') || !std::getline(ss, row_s, ',') ||
        !std::getline(ss, col_s, ',') || !std::getline(ss, var_s, ',') ||
        !std::getline(ss, val_s))
      throw std::invalid_argument("csv line " + std::to_string(lineno) + ": expected 5 fields");

    const Date date = Date::parse(date_s);
    const long ds = date.serial();
    if (ds < start || ds > end)
      throw std::invalid_argument("csv line " + std::to_string(lineno) + ": date " + date.iso() +
                                  " outside manifest range");
    const int d = static_cast<int>(ds - start);
    const int r = std::stoi(row_s);
    const int c = std::stoi(col_s);
    if (r < 0 || r >= cube.rows || c < 0 || c >= cube.cols)
      throw std::invalid_argument("csv line " + std::to_string(lineno) + ": cell (" + row_s +
                                  "," + col_s + ") outside grid");
    auto ch_it = channel_ix.find(var_s);
    if (ch_it == channel_ix.end())
      throw std::invalid_argument("csv line " + std::to_string(lineno) + ": unknown variable '" +
                                  var_s + "'");
    std::size_t pos;
    const double value = std::stod(val_s, &pos);
    const std::int64_t flat = cube.index(d, r, c, ch_it->second);
    if (seen[flat])
      throw std::invalid_argument("csv: duplicate cell " + date.iso() + " (" + row_s + "," +
                                  col_s + ") '" + var_s + "'");
    seen[flat] = 1;
    cube.values[flat] = value;
  }

  for (int d = 0; d < n_days; ++d)
    for (int r = 0; r < cube.rows; ++r)
      for (int c = 0; c < cube.cols; ++c)
        for (int ch = 0; ch < cube.width(); ++ch)
          if (!seen[cube.index(d, r, c, ch)])
            throw std::invalid_argument("csv: missing cell " + cube.dates[d].iso() + " (" +
                                        std::to_string(r) + "," + std::to_string(c) + ") '" +
                                        cube.channels[ch] + "'");
  return cube;
}

inline FeatureCube ingest_csv_file(const DatasetManifest& manifest, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open csv '" + path + "'");
  return ingest_csv(manifest, in);
}

/// Inverse of ingest_csv over the base variables; value formatting is
/// round-trip exact.
inline void export_csv(const FeatureCube& cube, std::ostream& out) {
  out << "date,row,col,variable,value\n";
  char buf[32];
  for (int d = 0; d < cube.days(); ++d)
    for (int r = 0; r < cube.rows; ++r)
      for (int c = 0; c < cube.cols; ++c)
        for (int ch = 0; ch < cube.width(); ++ch) {
          std::snprintf(buf, sizeof buf, "%.17g", cube.at(d, r, c, ch));
          out << cube.dates[d].iso() << ',' << r << ',' << c << ',' << cube.channels[ch] << ','
              << buf << '\n';
        }
}

}  // namespace raincast::data
