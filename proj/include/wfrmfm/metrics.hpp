#pragma once

// Evaluation: exact weighted W1, relative mass error, the snapshot
// propagation protocol (start from t=0 with weights 1/n0, compare at every
// later snapshot) and timing sweeps.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "wfrmfm/emd.hpp"
#include "wfrmfm/inference.hpp"
#include "wfrmfm/snapshot_io.hpp"

namespace wfrmfm {

inline constexpr std::size_t kExactW1Limit = 3000;

/// Deterministic mass-stratified subsample: the k-th of `count` picks is the
/// point whose cumulative normalized mass first exceeds (k + 1/2) / count.
/// Picks that land on the same point are merged; each pick carries 1/count.
inline WeightedCloud stratified_subsample(const WeightedCloud& c, std::size_t count) {
  const double total = c.masses.sum();
  std::vector<double> picked(c.size(), 0.0);
  double cum = 0.0;
  std::size_t i = 0;
  for (std::size_t k = 0; k < count; ++k) {
    const double level = (static_cast<double>(k) + 0.5) / static_cast<double>(count);
    while (i + 1 < c.size() && cum + c.masses[static_cast<Eigen::Index>(i)] / total <= level) {
      cum += c.masses[static_cast<Eigen::Index>(i)] / total;
      ++i;
    }
    picked[i] += 1.0 / static_cast<double>(count);
  }
  std::vector<std::size_t> idx;
  for (std::size_t k = 0; k < picked.size(); ++k) {
    if (picked[k] > 0.0) idx.push_back(k);
  }
  WeightedCloud out;
  out.points.resize(c.points.rows(), static_cast<Eigen::Index>(idx.size()));
  out.masses.resize(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) {
    out.points.col(static_cast<Eigen::Index>(k)) = c.points.col(static_cast<Eigen::Index>(idx[k]));
    out.masses[static_cast<Eigen::Index>(k)] = picked[idx[k]];
  }
  out.time = c.time;
  out.condition_id = c.condition_id;
  return out;
}

inline Mat euclidean_costs(const Mat& x, const Mat& y) {
  Mat C(x.cols(), y.cols());
  for (Eigen::Index j = 0; j < y.cols(); ++j) {
    for (Eigen::Index i = 0; i < x.cols(); ++i) C(i, j) = (x.col(i) - y.col(j)).norm();
  }
  return C;
}

/// W1 between the normalized mass distributions of two clouds. Clouds above
/// kExactW1Limit points are subsampled first (a warning goes to `warn`).
inline double wasserstein1(const WeightedCloud& a, const WeightedCloud& b, std::ostream* warn = &std::cerr) {
  if (a.size() == 0 || b.size() == 0) throw DataError("wasserstein1: empty cloud");
  if (a.dim() != b.dim()) throw DataError("wasserstein1: dimension mismatch");
  const double ta = a.masses.sum(), tb = b.masses.sum();
  if (!(ta > 0.0) || !(tb > 0.0)) throw DataError("wasserstein1: cloud has zero total mass");
  const WeightedCloud* pa = &a;
  const WeightedCloud* pb = &b;
  WeightedCloud sa, sb;
  if (a.size() > kExactW1Limit) {
    sa = stratified_subsample(a, kExactW1Limit);
    pa = &sa;
  }
  if (b.size() > kExactW1Limit) {
    sb = stratified_subsample(b, kExactW1Limit);
    pb = &sb;
  }
  if ((pa != &a || pb != &b) && warn) {
    *warn << "warning: W1 on subsample of " << kExactW1Limit << " points (clouds of " << a.size() << " and "
          << b.size() << ")\n";
  }
  const Vec wa = pa->masses / pa->masses.sum();
  const Vec wb = pb->masses / pb->masses.sum();
  return std::max(0.0, emd(wa, wb, euclidean_costs(pa->points, pb->points)).cost);
}

/// |sum w - n_k/n_0| / (n_k/n_0).
inline double rme(const Vec& predicted_masses, double n_k, double n_0) {
  if (!(n_k > 0.0) || !(n_0 > 0.0)) throw DomainError("rme: counts must be positive");
  const double ratio = n_k / n_0;
  return std::abs(predicted_masses.sum() - ratio) / ratio;
}

// ---------------------------------------------------------------------------
// Snapshot evaluation.

struct SnapshotScore {
  double time = 0.0;  // raw data time
  int condition = -1;
  double w1 = 0.0;
  double rme = 0.0;
};

struct EvalReport {
  std::vector<SnapshotScore> per_time;
  double mean_w1 = 0.0;
  double mean_rme = 0.0;
};

inline void finalize(EvalReport& r) {
  r.mean_w1 = r.mean_rme = 0.0;
  if (r.per_time.empty()) return;
  for (const auto& s : r.per_time) {
    r.mean_w1 += s.w1;
    r.mean_rme += s.rme;
  }
  r.mean_w1 /= static_cast<double>(r.per_time.size());
  r.mean_rme /= static_cast<double>(r.per_time.size());
}

/// The first snapshot with masses 1/n0 each.
inline WeightedCloud initial_population(const SnapshotDataset& ds) {
  const WeightedCloud& c0 = ds.at(0);
  WeightedCloud x0 = uniform_cloud(c0.points, 1.0 / static_cast<double>(c0.size()), 0.0);
  return x0;
}

/// Predicted clouds at every later data time, propagating from t=0 along the
/// data grid with `sub` equal steps per segment.
inline std::vector<WeightedCloud> predict_snapshots(const MeanFieldParams& p, const SnapshotDataset& ds, int sub,
                                                    std::optional<int> c = std::nullopt) {
  const auto grid = ds.normalized_grid();
  const auto part = refine_partition(grid, sub);
  const auto r = multi_step(p, initial_population(ds), part, c, true);
  std::vector<WeightedCloud> out;
  for (std::size_t k = 1; k < grid.size(); ++k) {
    WeightedCloud w;
    w.points = r.trail_points[k * static_cast<std::size_t>(sub) - 1];
    w.masses = r.trail_masses[k * static_cast<std::size_t>(sub) - 1];
    w.time = ds.time_grid[k];
    out.push_back(std::move(w));
  }
  return out;
}

/// Scores predictions (one per later data time) against the dataset.
inline EvalReport score_predictions(const std::vector<WeightedCloud>& pred, const SnapshotDataset& ds,
                                    std::ostream* warn = &std::cerr) {
  if (pred.size() + 1 != ds.time_grid.size()) throw DataError("prediction count does not match the time grid");
  const double n0 = ds.at(0).masses.sum();
  EvalReport r;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const WeightedCloud& ref = ds.at(k + 1);
    if (pred[k].time != ref.time) throw DataError("prediction times do not match the data grid");
    SnapshotScore s;
    s.time = ref.time;
    s.w1 = wasserstein1(pred[k], ref, warn);
    s.rme = rme(pred[k].masses, ref.masses.sum(), n0);
    r.per_time.push_back(s);
  }
  finalize(r);
  return r;
}

/// Scores every snapshot of `pred` after the first reference time against the
/// reference snapshot with the same (time, condition). Masses are compared
/// relative to each file's unconditioned snapshot at the first reference time,
/// so a file compared with itself scores zero.
inline EvalReport compare_datasets(const SnapshotDataset& pred, const SnapshotDataset& ref,
                                   std::ostream* warn = &std::cerr) {
  if (pred.dim != ref.dim) {
    throw DataError("prediction dimension " + std::to_string(pred.dim) + " does not match reference dimension " +
                    std::to_string(ref.dim));
  }
  const double t0 = ref.time_grid.front();
  const WeightedCloud* p0 = pred.find(t0, -1);
  const WeightedCloud* r0 = ref.find(t0, -1);
  if (!p0 || !r0) throw DataError("time grid mismatch: both files need an unconditioned snapshot at the first time");
  const double pbase = p0->total_mass(), rbase = r0->total_mass();
  EvalReport r;
  for (const auto& s : pred.snapshots) {
    if (s.time == t0) continue;
    const int c = s.condition_id.value_or(-1);
    const WeightedCloud* ref_s = ref.find(s.time, c);
    if (!ref_s) {
      throw DataError("time grid mismatch: reference has no snapshot at time " + std::to_string(s.time) +
                      (c >= 0 ? " condition " + std::to_string(c) : std::string()));
    }
    SnapshotScore sc;
    sc.time = s.time;
    sc.condition = c;
    sc.w1 = wasserstein1(s, *ref_s, warn);
    const double ratio = ref_s->total_mass() / rbase;
    sc.rme = std::abs(s.total_mass() / pbase - ratio) / ratio;
    r.per_time.push_back(sc);
  }
  if (r.per_time.empty()) throw DataError("time grid mismatch: prediction has no snapshot after the first time");
  finalize(r);
  return r;
}

inline EvalReport evaluate(const MeanFieldParams& p, const SnapshotDataset& ds, int sub = 1,
                           std::ostream* warn = &std::cerr) {
  return score_predictions(predict_snapshots(p, ds, sub), ds, warn);
}

// ---------------------------------------------------------------------------
// Timing.

struct TimingEntry {
  std::string method;
  int K = 0;
  double median_ns = 0.0;
  double sd_ns = 0.0;
  int repeats = 0;
};

/// Median and standard deviation of `repeats` timed calls of f (after one
/// untimed warm-up call). f returns its own measured wall time in ns.
inline TimingEntry time_runs(const std::string& method, int K, int repeats, const std::function<double()>& f) {
  if (repeats < 1) throw DomainError("repeats must be >= 1");
  f();
  std::vector<double> t(static_cast<std::size_t>(repeats));
  for (auto& v : t) v = f();
  TimingEntry e;
  e.method = method;
  e.K = K;
  e.repeats = repeats;
  const double mean = std::accumulate(t.begin(), t.end(), 0.0) / repeats;
  double ss = 0.0;
  for (double v : t) ss += (v - mean) * (v - mean);
  e.sd_ns = repeats > 1 ? std::sqrt(ss / (repeats - 1)) : 0.0;
  std::sort(t.begin(), t.end());
  e.median_ns = repeats % 2 ? t[static_cast<std::size_t>(repeats / 2)]
                            : 0.5 * (t[static_cast<std::size_t>(repeats / 2 - 1)] + t[static_cast<std::size_t>(repeats / 2)]);
  return e;
}

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

inline LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw DomainError("linear_fit needs two or more points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sxx += (x[k] - mx) * (x[k] - mx);
    sxy += (x[k] - mx) * (y[k] - my);
    syy += (y[k] - my) * (y[k] - my);
  }
  LinearFit f;
  f.slope = sxx > 0.0 ? sxy / sxx : 0.0;
  f.intercept = my - f.slope * mx;
  f.r2 = syy > 0.0 ? sxy * sxy / (sxx * syy) : 1.0;
  return f;
}

struct BenchRow {
  int K = 0;
  TimingEntry timing;
  EvalReport accuracy;
};

struct BenchReport {
  std::vector<BenchRow> rows;
  TimingEntry one_step;
  TimingEntry euler;
  LinearFit fit;  // median time against K
};

/// For each K (steps per data segment): timing of the full propagation and
/// accuracy against the data. Also times a single one-step call and a
/// 100-step Euler rollout of the instantaneous fields from t=0 to t=1.
inline BenchReport bench(const MeanFieldParams& p, const SnapshotDataset& ds, const std::vector<int>& K_list,
                         int repeats, int euler_repeats, int euler_steps = 100, std::ostream* warn = &std::cerr) {
  BenchReport out;
  const auto x0 = initial_population(ds);
  const auto grid = ds.normalized_grid();
  std::vector<double> ks, ts;
  for (int K : K_list) {
    BenchRow row;
    row.K = K;
    const auto part = refine_partition(grid, K);
    row.timing = time_runs("multi_step", K, repeats,
                           [&] { return static_cast<double>(multi_step(p, x0, part).wall_ns); });
    row.accuracy = evaluate(p, ds, K, warn);
    ks.push_back(K);
    ts.push_back(row.timing.median_ns);
    out.rows.push_back(std::move(row));
  }
  if (ks.size() >= 2) out.fit = linear_fit(ks, ts);
  out.one_step = time_runs("one_step", 1, repeats, [&] { return static_cast<double>(one_step(p, x0).wall_ns); });
  out.euler = time_runs("euler", euler_steps, euler_repeats,
                        [&] { return static_cast<double>(euler_rollout(p, x0, euler_steps).wall_ns); });
  return out;
}

// ---------------------------------------------------------------------------
// Report output.

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  j["mean_w1"] = r.mean_w1;
  j["mean_rme"] = r.mean_rme;
  j["per_time"] = nlohmann::json::array();
  for (const auto& s : r.per_time) {
    j["per_time"].push_back({{"time", s.time}, {"condition", s.condition}, {"w1", s.w1}, {"rme", s.rme}});
  }
  return j;
}

inline nlohmann::json to_json(const TimingEntry& t) {
  return {{"method", t.method}, {"K", t.K}, {"median_ns", t.median_ns}, {"sd_ns", t.sd_ns}, {"repeats", t.repeats}};
}

inline void write_eval_csv(const EvalReport& r, std::ostream& os) {
  os << "time,cond,w1,rme\n";
  char buf[128];
  for (const auto& s : r.per_time) {
    std::snprintf(buf, sizeof buf, "%.17g,%d,%.17g,%.17g\n", s.time, s.condition, s.w1, s.rme);
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "mean,,%.17g,%.17g\n", r.mean_w1, r.mean_rme);
  os << buf;
}

inline void write_bench_csv(const BenchReport& b, std::ostream& os) {
  os << "method,K,median_ns,sd_ns,repeats,mean_w1,mean_rme\n";
  char buf[256];
  for (const auto& row : b.rows) {
    std::snprintf(buf, sizeof buf, "%s,%d,%.1f,%.1f,%d,%.17g,%.17g\n", row.timing.method.c_str(), row.K,
                  row.timing.median_ns, row.timing.sd_ns, row.timing.repeats, row.accuracy.mean_w1,
                  row.accuracy.mean_rme);
    os << buf;
  }
  for (const auto* t : {&b.one_step, &b.euler}) {
    std::snprintf(buf, sizeof buf, "%s,%d,%.1f,%.1f,%d,,\n", t->method.c_str(), t->K, t->median_ns, t->sd_ns,
                  t->repeats);
    os << buf;
  }
}

}  // namespace wfrmfm
