#pragma once

// Snapshot datasets and their flat CSV form:
//   time,cond,mass,x0,...,x{d-1}
// one row per cell; rows are grouped into clouds by (time, cond). cond is -1
// for unconditioned data.

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "wfrmfm/types.hpp"

namespace wfrmfm {

struct SnapshotDataset {
  std::vector<WeightedCloud> snapshots;  // ordered by (time, cond)
  std::vector<double> time_grid;         // distinct raw times, increasing
  double t_min = 0.0;
  double t_max = 1.0;
  int dim = 0;

  double normalize_time(double t) const {
    return t_max > t_min ? (t - t_min) / (t_max - t_min) : 0.0;
  }
  std::vector<double> normalized_grid() const {
    std::vector<double> g;
    for (double t : time_grid) g.push_back(normalize_time(t));
    return g;
  }

  /// Unconditioned snapshot at time index k (cond -1 or unset).
  const WeightedCloud& at(std::size_t k) const {
    for (const auto& s : snapshots) {
      if (s.time == time_grid.at(k) && (!s.condition_id || *s.condition_id < 0)) return s;
    }
    throw DataError("no unconditioned snapshot at time " + std::to_string(time_grid.at(k)));
  }

  const WeightedCloud* find(double time, int cond) const {
    for (const auto& s : snapshots) {
      if (s.time == time && s.condition_id.value_or(-1) == cond) return &s;
    }
    return nullptr;
  }

  std::vector<int> conditions() const {
    std::vector<int> c;
    for (const auto& s : snapshots) {
      const int id = s.condition_id.value_or(-1);
      if (id >= 0 && std::find(c.begin(), c.end(), id) == c.end()) c.push_back(id);
    }
    std::sort(c.begin(), c.end());
    return c;
  }

  void validate() const {
    if (snapshots.empty()) throw DataError("dataset has no snapshots");
    for (std::size_t k = 1; k < time_grid.size(); ++k) {
      if (!(time_grid[k] > time_grid[k - 1])) throw DataError("time grid is not strictly increasing");
    }
    for (const auto& s : snapshots) {
      if (s.dim() != dim) throw DataError("snapshot dimension mismatch");
      s.validate();
    }
  }
};

/// Builds the dataset bookkeeping (grid, normalisation, ordering) from clouds.
inline SnapshotDataset make_dataset(std::vector<WeightedCloud> clouds) {
  SnapshotDataset ds;
  if (clouds.empty()) throw DataError("dataset has no snapshots");
  std::stable_sort(clouds.begin(), clouds.end(), [](const WeightedCloud& a, const WeightedCloud& b) {
    if (a.time != b.time) return a.time < b.time;
    return a.condition_id.value_or(-1) < b.condition_id.value_or(-1);
  });
  ds.dim = clouds.front().dim();
  for (const auto& c : clouds) {
    if (ds.time_grid.empty() || ds.time_grid.back() != c.time) ds.time_grid.push_back(c.time);
  }
  ds.t_min = ds.time_grid.front();
  ds.t_max = ds.time_grid.back();
  ds.snapshots = std::move(clouds);
  ds.validate();
  return ds;
}

inline void save_snapshots(const SnapshotDataset& ds, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw DataError("cannot open snapshot file for writing: " + path);
  std::fputs("time,cond,mass", f);
  for (int k = 0; k < ds.dim; ++k) std::fprintf(f, ",x%d", k);
  std::fputc('\n', f);
  for (const auto& s : ds.snapshots) {
    const int cond = s.condition_id.value_or(-1);
    for (Eigen::Index i = 0; i < s.points.cols(); ++i) {
      std::fprintf(f, "%.17g,%d,%.17g", s.time, cond, s.masses[i]);
      for (Eigen::Index k = 0; k < s.points.rows(); ++k) std::fprintf(f, ",%.17g", s.points(k, i));
      std::fputc('\n', f);
    }
  }
  if (std::fclose(f) != 0) throw DataError("failed writing snapshot file: " + path);
}

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_number(const std::string& s, std::size_t line_no) {
  if (s.empty()) throw DataError("line " + std::to_string(line_no) + ": empty field");
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0' || errno == ERANGE) {
    throw DataError("line " + std::to_string(line_no) + ": cannot parse number '" + s + "'");
  }
  if (!std::isfinite(v)) throw DataError("line " + std::to_string(line_no) + ": non-finite value");
  return v;
}

}  // namespace detail

inline SnapshotDataset load_snapshots(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open snapshot file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_csv(line);
  if (header.size() < 4 || header[0] != "time" || header[1] != "cond" || header[2] != "mass") {
    throw DataError(path + ": header must start with time,cond,mass followed by coordinates");
  }
  const int d = static_cast<int>(header.size()) - 3;

  struct Group {
    std::vector<double> masses;
    std::vector<double> coords;
  };
  std::map<std::pair<double, int>, Group> groups;
  std::size_t line_no = 1, rows = 0;
  double last_time = -std::numeric_limits<double>::infinity();
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = detail::split_csv(line);
    if (static_cast<int>(fields.size()) != d + 3) {
      throw DataError("line " + std::to_string(line_no) + ": expected " + std::to_string(d + 3) +
                      " fields, found " + std::to_string(fields.size()));
    }
    const double t = detail::parse_number(fields[0], line_no);
    const double cond_f = detail::parse_number(fields[1], line_no);
    const double mass = detail::parse_number(fields[2], line_no);
    if (cond_f != std::floor(cond_f)) throw DataError("line " + std::to_string(line_no) + ": cond must be an integer");
    if (mass < 0.0) throw DataError("line " + std::to_string(line_no) + ": negative mass");
    if (t < last_time) throw DataError("line " + std::to_string(line_no) + ": time decreases");
    last_time = t;
    Group& g = groups[{t, static_cast<int>(cond_f)}];
    g.masses.push_back(mass);
    for (int k = 0; k < d; ++k) g.coords.push_back(detail::parse_number(fields[static_cast<std::size_t>(3 + k)], line_no));
    ++rows;
  }
  if (rows == 0) throw DataError(path + ": no data rows");

  std::vector<WeightedCloud> clouds;
  for (auto& [key, g] : groups) {
    WeightedCloud c;
    const auto n = static_cast<Eigen::Index>(g.masses.size());
    c.points = Eigen::Map<Mat>(g.coords.data(), d, n);
    c.masses = Eigen::Map<Vec>(g.masses.data(), n);
    c.time = key.first;
    if (key.second >= 0) c.condition_id = key.second;
    clouds.push_back(std::move(c));
  }
  return make_dataset(std::move(clouds));
}

}  // namespace wfrmfm
