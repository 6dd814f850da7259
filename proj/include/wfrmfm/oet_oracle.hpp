#pragma once

// Reference solver for tiny OET instances. It minimizes the unregularized
// objective directly, so it shares nothing with the scaling iterations in
// oet.hpp beyond the cost matrix.

#include <cmath>
#include <random>

#include "wfrmfm/oet.hpp"

namespace wfrmfm {

struct BruteForceResult {
  Mat plan;
  double objective = 0.0;
};

namespace detail {

// Exact minimizer of the objective in entry (i,j) with all other entries
// fixed. Stationarity reads (R + x)(K + x) = a_i b_j exp(-C_ij) where R, K are
// the rest of row i and column j; the positive root is clamped at zero.
inline double coordinate_optimum(double R, double K, double rhs) {
  const double p = R + K;
  const double q = R * K - rhs;
  const double disc = std::sqrt(std::max(0.0, p * p - 4.0 * q));
  // Stable positive root of x^2 + p x + q.
  double root;
  if (q >= 0.0) {
    root = p > 0.0 ? -2.0 * q / (p + disc) : 0.0;
  } else {
    root = p >= 0.0 ? -2.0 * q / (p + disc) : (disc - p) / 2.0;
  }
  return std::max(0.0, root);
}

}  // namespace detail

/// Coordinate descent on the unregularized OET objective, restarted from
/// several starting plans; returns the best plan found.
inline BruteForceResult brute_force_oet_cost(const Mat& C, const Vec& a, const Vec& b,
                                             int restarts = 8, int sweeps = 20000,
                                             std::uint64_t seed = 1) {
  const auto n0 = C.rows(), n1 = C.cols();
  Mat rhs(n0, n1);
  for (Eigen::Index i = 0; i < n0; ++i) {
    for (Eigen::Index j = 0; j < n1; ++j) {
      rhs(i, j) = std::isfinite(C(i, j)) ? a[i] * b[j] * std::exp(-C(i, j)) : 0.0;
    }
  }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  BruteForceResult best;
  best.objective = kInf;
  for (int r = 0; r < restarts; ++r) {
    Mat P(n0, n1);
    for (Eigen::Index i = 0; i < n0; ++i) {
      for (Eigen::Index j = 0; j < n1; ++j) {
        if (r == 0) P(i, j) = 0.0;
        else if (r == 1) P(i, j) = std::sqrt(rhs(i, j));
        else P(i, j) = std::isfinite(C(i, j)) ? 2.0 * unif(rng) * std::sqrt(a[i] * b[j]) : 0.0;
      }
    }
    Vec rows = P.rowwise().sum();
    Vec cols = P.colwise().sum().transpose();
    for (int s = 0; s < sweeps; ++s) {
      double moved = 0.0;
      for (Eigen::Index i = 0; i < n0; ++i) {
        for (Eigen::Index j = 0; j < n1; ++j) {
          const double old = P(i, j);
          const double x = rhs(i, j) > 0.0
                               ? detail::coordinate_optimum(rows[i] - old, cols[j] - old, rhs(i, j))
                               : 0.0;
          rows[i] += x - old;
          cols[j] += x - old;
          P(i, j) = x;
          moved = std::max(moved, std::abs(x - old));
        }
      }
      if (moved < 1e-15) break;
    }
    const double obj = oet_objective(C, P, a, b);
    if (obj < best.objective) {
      best.objective = obj;
      best.plan = P;
    }
  }
  return best;
}

inline BruteForceResult brute_force_oet(const WeightedCloud& mu0, const WeightedCloud& mu1,
                                        double delta) {
  if (mu0.size() > 4 || mu1.size() > 4) throw DataError("brute_force_oet: instance too large");
  return brute_force_oet_cost(wfr_cost_matrix(mu0, mu1, delta), mu0.masses, mu1.masses);
}

}  // namespace wfrmfm
