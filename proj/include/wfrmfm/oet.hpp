#pragma once

// Optimal Entropy Transport with the WFR cost: KL-relaxed unbalanced transport
// solved by log-domain scaling, plus semi-coupling extraction and the
// mini-batch variant used for large snapshots.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "wfrmfm/config.hpp"
#include "wfrmfm/types.hpp"
#include "wfrmfm/wfr_geometry.hpp"

namespace wfrmfm {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct TransportPlan {
  Mat entries;  // n0 x n1
  double epsilon = 0.0;
  bool converged = false;
  int iterations = 0;
  // Row/column alignment into the clouds the plan was built from; identity
  // for full solves, subset indices for mini-batch solves.
  std::vector<std::size_t> source_index;
  std::vector<std::size_t> target_index;
};

struct SemiCoupling {
  Mat entries;                   // gamma_0, n0 x n1
  std::vector<bool> pure_death;  // rows whose plan mass is zero
  Vec death_mass;                // mu0 mass carried by pure-death rows
};

/// C(i,j) = -2 ln cos_plus(|x_i - y_j| / (2 delta)), +inf outside the cone.
inline Mat wfr_cost_matrix(const WeightedCloud& src, const WeightedCloud& tgt, double delta) {
  if (!(delta > 0.0)) throw DomainError("wfr_cost_matrix: delta must be positive");
  if (src.dim() != tgt.dim()) throw DataError("wfr_cost_matrix: dimension mismatch");
  const auto n0 = src.points.cols();
  const auto n1 = tgt.points.cols();
  Mat C(n0, n1);
  for (Eigen::Index j = 0; j < n1; ++j) {
    for (Eigen::Index i = 0; i < n0; ++i) {
      const double d = (src.points.col(i) - tgt.points.col(j)).norm();
      const double c = cos_plus(d / (2.0 * delta));
      C(i, j) = c > 0.0 ? -2.0 * std::log(c) : kInf;
    }
  }
  return C;
}

/// Generalized KL(p || q) = sum p log(p/q) - p + q, with 0 log 0 = 0.
inline double generalized_kl(const Vec& p, const Vec& q) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) {
      if (q[i] <= 0.0) return kInf;
      s += p[i] * std::log(p[i] / q[i]) - p[i] + q[i];
    } else {
      s += q[i];
    }
  }
  return s;
}

/// Unregularized OET objective <C, gamma> + KL(gamma 1 | a) + KL(gamma^T 1 | b).
/// Multiply by 2 delta^2 to obtain WFR^2.
inline double oet_objective(const Mat& C, const Mat& plan, const Vec& a, const Vec& b) {
  double transport = 0.0;
  for (Eigen::Index j = 0; j < plan.cols(); ++j) {
    for (Eigen::Index i = 0; i < plan.rows(); ++i) {
      const double p = plan(i, j);
      if (p > 0.0) transport += p * C(i, j);
    }
  }
  return transport + generalized_kl(plan.rowwise().sum(), a) +
         generalized_kl(plan.colwise().sum().transpose(), b);
}

/// Median of the finite entries of a cost matrix.
inline double median_finite_cost(const Mat& C) {
  std::vector<double> vals;
  vals.reserve(static_cast<std::size_t>(C.size()));
  for (Eigen::Index k = 0; k < C.size(); ++k) {
    if (std::isfinite(C.data()[k])) vals.push_back(C.data()[k]);
  }
  if (vals.empty()) return 0.0;
  const auto mid = vals.begin() + static_cast<std::ptrdiff_t>(vals.size() / 2);
  std::nth_element(vals.begin(), mid, vals.end());
  return *mid;
}

inline double default_epsilon(const Mat& C) {
  const double med = median_finite_cost(C);
  return med > 0.0 ? 0.05 * med : 1e-3;
}

namespace detail {

// log sum_k exp(v_k), stable; returns -inf when every term is -inf.
inline double log_sum_exp(const double* v, std::size_t n) {
  double mx = -kInf;
  for (std::size_t k = 0; k < n; ++k) mx = std::max(mx, v[k]);
  if (mx == -kInf) return -kInf;
  double s = 0.0;
  for (std::size_t k = 0; k < n; ++k) s += std::exp(v[k] - mx);
  return mx + std::log(s);
}

}  // namespace detail

struct OetOptions {
  double epsilon = 0.0;  // <= 0 selects default_epsilon(C)
  int max_iter = 100000;
  double tol = 1e-9;
};

/// Entropic OET between a (rows) and b (columns) for a precomputed cost.
/// Marginal KL weights are 1; the entropic reference is a (x) b.
inline TransportPlan solve_oet_cost(const Mat& C, const Vec& a, const Vec& b, OetOptions opt) {
  const auto n0 = C.rows();
  const auto n1 = C.cols();
  if (n0 == 0 || n1 == 0) throw DataError("solve_oet: empty cloud");
  if (a.size() != n0 || b.size() != n1) throw DataError("solve_oet: mass/cost shape mismatch");
  const double eps = opt.epsilon > 0.0 ? opt.epsilon : default_epsilon(C);

  // Finite sentinel for out-of-cone pairs; those entries are zeroed at the end.
  Mat Cs = C.unaryExpr([](double c) { return std::isfinite(c) ? c : tol::kInfiniteCost; });

  Vec log_a(n0), log_b(n1);
  for (Eigen::Index i = 0; i < n0; ++i) log_a[i] = a[i] > 0.0 ? std::log(a[i]) : -kInf;
  for (Eigen::Index j = 0; j < n1; ++j) log_b[j] = b[j] > 0.0 ? std::log(b[j]) : -kInf;

  const double damp = 1.0 / (1.0 + eps);  // rho / (rho + eps) with rho = 1
  Vec f = Vec::Zero(n0), g = Vec::Zero(n1);
  std::vector<double> buf(static_cast<std::size_t>(std::max(n0, n1)));

  TransportPlan plan;
  plan.epsilon = eps;
  int it = 0;
  for (; it < opt.max_iter; ++it) {
    double change = 0.0;
    for (Eigen::Index i = 0; i < n0; ++i) {
      if (a[i] <= 0.0) continue;
      for (Eigen::Index j = 0; j < n1; ++j) buf[j] = log_b[j] + (g[j] - Cs(i, j)) / eps;
      const double fi = -eps * damp * detail::log_sum_exp(buf.data(), static_cast<std::size_t>(n1));
      change = std::max(change, std::abs(fi - f[i]));
      f[i] = fi;
    }
    for (Eigen::Index j = 0; j < n1; ++j) {
      if (b[j] <= 0.0) continue;
      for (Eigen::Index i = 0; i < n0; ++i) buf[i] = log_a[i] + (f[i] - Cs(i, j)) / eps;
      const double gj = -eps * damp * detail::log_sum_exp(buf.data(), static_cast<std::size_t>(n0));
      change = std::max(change, std::abs(gj - g[j]));
      g[j] = gj;
    }
    if (change < opt.tol) {
      plan.converged = true;
      ++it;
      break;
    }
  }
  plan.iterations = it;

  plan.entries.resize(n0, n1);
  for (Eigen::Index j = 0; j < n1; ++j) {
    for (Eigen::Index i = 0; i < n0; ++i) {
      if (!std::isfinite(C(i, j)) || a[i] <= 0.0 || b[j] <= 0.0) {
        plan.entries(i, j) = 0.0;
      } else {
        plan.entries(i, j) = std::exp(log_a[i] + log_b[j] + (f[i] + g[j] - C(i, j)) / eps);
      }
    }
  }
  plan.source_index.resize(static_cast<std::size_t>(n0));
  plan.target_index.resize(static_cast<std::size_t>(n1));
  std::iota(plan.source_index.begin(), plan.source_index.end(), std::size_t{0});
  std::iota(plan.target_index.begin(), plan.target_index.end(), std::size_t{0});
  return plan;
}

inline TransportPlan solve_oet(const WeightedCloud& mu0, const WeightedCloud& mu1, double delta,
                               double epsilon, int max_iter = 100000, double tol = 1e-9) {
  mu0.validate();
  mu1.validate();
  const Mat C = wfr_cost_matrix(mu0, mu1, delta);
  return solve_oet_cost(C, mu0.masses, mu1.masses, OetOptions{epsilon, max_iter, tol});
}

/// gamma_0 = plan rows rescaled to carry the mu0 masses. Zero rows are
/// flagged pure-death; their mass is kept in death_mass. mu0 is the cloud the
/// plan was solved on (row i is point i).
inline SemiCoupling semi_coupling(const TransportPlan& plan, const WeightedCloud& mu0) {
  if (mu0.masses.size() != plan.entries.rows()) throw DomainError("semi_coupling: cloud does not match plan");
  const auto n0 = plan.entries.rows();
  SemiCoupling sc;
  sc.entries = Mat::Zero(n0, plan.entries.cols());
  sc.pure_death.assign(static_cast<std::size_t>(n0), false);
  sc.death_mass = Vec::Zero(n0);
  for (Eigen::Index i = 0; i < n0; ++i) {
    const double mass = mu0.masses[i];
    const double row = plan.entries.row(i).sum();
    if (row > 0.0) {
      sc.entries.row(i) = plan.entries.row(i) * (mass / row);
    } else {
      sc.pure_death[static_cast<std::size_t>(i)] = true;
      sc.death_mass[i] = mass;
    }
  }
  return sc;
}

/// Per-pair terminal mass m1(i,j) = gamma_1(i,j) / gamma_0(i,j) for unit
/// starting mass; gamma_1 is the column-normalized plan times mu1.
inline double pair_mass(const TransportPlan& plan, const SemiCoupling& sc, const WeightedCloud& mu1,
                        Eigen::Index i, Eigen::Index j) {
  const double g0 = sc.entries(i, j);
  if (!(g0 > 0.0)) {
    throw DomainError("pair_mass: gamma_0 is zero for pair (" + std::to_string(i) + ", " +
                      std::to_string(j) + ")");
  }
  const double col = plan.entries.col(j).sum();
  const double g1 = plan.entries(i, j) / col * mu1.masses[j];
  return g1 / g0;
}

/// Dense m1 matrix; entries with gamma_0 == 0 are left at 0.
inline Mat pair_masses(const TransportPlan& plan, const SemiCoupling& sc, const WeightedCloud& mu1) {
  Mat m1 = Mat::Zero(plan.entries.rows(), plan.entries.cols());
  for (Eigen::Index j = 0; j < m1.cols(); ++j) {
    for (Eigen::Index i = 0; i < m1.rows(); ++i) {
      if (sc.entries(i, j) > 0.0) m1(i, j) = pair_mass(plan, sc, mu1, i, j);
    }
  }
  return m1;
}

/// Draw k distinct indices with probability proportional to weight
/// (exponential-key sampling without replacement).
inline std::vector<std::size_t> sample_without_replacement(const Vec& weights, std::size_t k,
                                                           std::mt19937_64& rng) {
  const auto n = static_cast<std::size_t>(weights.size());
  std::vector<std::pair<double, std::size_t>> keys;
  keys.reserve(n);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = unif(rng);
    const double w = weights[static_cast<Eigen::Index>(i)];
    // log(u)/w is larger for heavier points; zero weights never win.
    keys.emplace_back(w > 0.0 ? std::log(u) / w : -kInf, i);
  }
  k = std::min(k, n);
  std::partial_sort(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(k), keys.end(),
                    [](const auto& x, const auto& y) {
                      return x.first > y.first || (x.first == y.first && x.second < y.second);
                    });
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = keys[i].second;
  std::sort(out.begin(), out.end());
  return out;
}

inline WeightedCloud subset_cloud(const WeightedCloud& c, const std::vector<std::size_t>& idx,
                                  double mass_each) {
  WeightedCloud s;
  s.points.resize(c.points.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) {
    s.points.col(static_cast<Eigen::Index>(k)) = c.points.col(static_cast<Eigen::Index>(idx[k]));
  }
  s.masses = Vec::Constant(static_cast<Eigen::Index>(idx.size()), mass_each);
  s.time = c.time;
  s.condition_id = c.condition_id;
  return s;
}

struct MinibatchCoupling {
  TransportPlan plan;  // rows/cols are the subsets; source_index/target_index locate them in the full clouds
  SemiCoupling coupling;
  WeightedCloud source;  // subsampled clouds the plan was solved on
  WeightedCloud target;
};

/// OET on a mass-proportional subsample of B points from each cloud. Each
/// sampled point carries |mu| / B so subset totals match the full clouds.
/// B at least the cloud sizes falls back to the full solve.
inline MinibatchCoupling minibatch_semi_coupling(const WeightedCloud& mu0, const WeightedCloud& mu1,
                                                 std::size_t batch, double delta, double epsilon,
                                                 std::uint64_t seed, int max_iter = 100000,
                                                 double tol = 1e-9) {
  MinibatchCoupling out;
  if (batch >= mu0.size() && batch >= mu1.size()) {
    out.source = mu0;
    out.target = mu1;
  } else {
    std::mt19937_64 rng(seed);
    const auto i0 = sample_without_replacement(mu0.masses, batch, rng);
    const auto i1 = sample_without_replacement(mu1.masses, batch, rng);
    out.source = subset_cloud(mu0, i0, mu0.total_mass() / static_cast<double>(i0.size()));
    out.target = subset_cloud(mu1, i1, mu1.total_mass() / static_cast<double>(i1.size()));
    out.plan = solve_oet(out.source, out.target, delta, epsilon, max_iter, tol);
    out.coupling = semi_coupling(out.plan, out.source);
    out.plan.source_index = i0;
    out.plan.target_index = i1;
    return out;
  }
  out.plan = solve_oet(mu0, mu1, delta, epsilon, max_iter, tol);
  out.coupling = semi_coupling(out.plan, mu0);
  return out;
}

// Plan dump: "WFRP", u32 n0, u32 n1, f64 epsilon, then n0*n1 f64 row-major,
// all little-endian.
namespace detail {

template <typename T>
void put_le(std::ostream& os, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint16_t>>;
  auto bits = std::bit_cast<U>(value);
  unsigned char bytes[sizeof(T)];
  for (std::size_t k = 0; k < sizeof(T); ++k) {
    bytes[k] = static_cast<unsigned char>(bits & 0xFFu);
    bits = static_cast<U>(bits >> 8);
  }
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                               std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint16_t>>;
  unsigned char bytes[sizeof(T)];
  is.read(reinterpret_cast<char*>(bytes), sizeof(T));
  if (!is) throw DataError("unexpected end of binary file");
  U bits = 0;
  for (std::size_t k = sizeof(T); k-- > 0;) bits = static_cast<U>((bits << 8) | bytes[k]);
  return std::bit_cast<T>(bits);
}

}  // namespace detail

inline void save_plan(const TransportPlan& plan, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open plan file for writing: " + path);
  os.write("WFRP", 4);
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(plan.entries.rows()));
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(plan.entries.cols()));
  detail::put_le<double>(os, plan.epsilon);
  for (Eigen::Index i = 0; i < plan.entries.rows(); ++i) {
    for (Eigen::Index j = 0; j < plan.entries.cols(); ++j) detail::put_le<double>(os, plan.entries(i, j));
  }
  if (!os) throw DataError("failed writing plan file: " + path);
}

inline TransportPlan load_plan(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open plan file: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "WFRP") throw DataError("bad plan magic in " + path);
  const auto n0 = detail::get_le<std::uint32_t>(is);
  const auto n1 = detail::get_le<std::uint32_t>(is);
  TransportPlan plan;
  plan.epsilon = detail::get_le<double>(is);
  plan.entries.resize(n0, n1);
  for (Eigen::Index i = 0; i < plan.entries.rows(); ++i) {
    for (Eigen::Index j = 0; j < plan.entries.cols(); ++j) plan.entries(i, j) = detail::get_le<double>(is);
  }
  plan.converged = true;
  plan.source_index.resize(n0);
  plan.target_index.resize(n1);
  std::iota(plan.source_index.begin(), plan.source_index.end(), std::size_t{0});
  std::iota(plan.target_index.begin(), plan.target_index.end(), std::size_t{0});
  return plan;
}

}  // namespace wfrmfm
