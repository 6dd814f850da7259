#pragma once

#include <chrono>
#include <cmath>
#include <optional>
#include <random>
#include <vector>

#include "wfrmfm/meanfield_net.hpp"

namespace wfrmfm {

struct InferenceResult {
  Mat points;  // d x n
  Vec masses;
  std::vector<Mat> trail_points;  // state after every step, if requested
  std::vector<Vec> trail_masses;
  std::int64_t wall_ns = 0;
};

namespace detail {

inline std::vector<int> cond_vector(const MeanFieldParams& p, Eigen::Index n, std::optional<int> c) {
  if (!c) return {};
  if (p.e == 0) throw DataError("model is unconditional but a condition id was given");
  return std::vector<int>(static_cast<std::size_t>(n), *c);
}

}  // namespace detail

/// x <- x + dt_k v(x, t_k, t_{k+1}), m <- m exp(dt_k h(x, t_k, t_{k+1})), with
/// both heads evaluated at the pre-step position.
inline InferenceResult multi_step(const MeanFieldParams& p, const WeightedCloud& cloud,
                                  const std::vector<double>& partition, std::optional<int> c = std::nullopt,
                                  bool keep_trail = false) {
  if (partition.size() < 2) throw DomainError("partition needs at least two times");
  for (std::size_t k = 1; k < partition.size(); ++k) {
    if (!(partition[k] > partition[k - 1])) throw DomainError("partition must be strictly increasing");
  }
  if (cloud.dim() != p.d) {
    throw DataError("cloud dimension " + std::to_string(cloud.dim()) + " does not match model dimension " +
                    std::to_string(p.d));
  }
  const auto n = cloud.points.cols();
  const auto cond = detail::cond_vector(p, n, c);
  InferenceResult r;
  const auto t0 = std::chrono::steady_clock::now();
  Mat x = cloud.points;
  Vec m = cloud.masses;
  for (std::size_t k = 0; k + 1 < partition.size(); ++k) {
    const double dt = partition[k + 1] - partition[k];
    const Mat X = pack_inputs(p, x, Vec::Constant(n, partition[k]), Vec::Constant(n, partition[k + 1]), cond);
    const BatchOutput out = forward_batch(p, X);
    x += dt * out.v;
    m = m.cwiseProduct((dt * out.h).array().exp().matrix());
    if (keep_trail) {
      r.trail_points.push_back(x);
      r.trail_masses.push_back(m);
    }
  }
  r.wall_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - t0).count();
  r.points = std::move(x);
  r.masses = std::move(m);
  return r;
}

/// Single evaluation of the mean fields over [0, 1].
inline InferenceResult one_step(const MeanFieldParams& p, const WeightedCloud& cloud,
                                std::optional<int> c = std::nullopt) {
  return multi_step(p, cloud, {0.0, 1.0}, c);
}

/// Explicit Euler on the instantaneous fields v(x, t, t), h(x, t, t).
inline InferenceResult euler_rollout(const MeanFieldParams& p, const WeightedCloud& cloud, int n_steps,
                                     std::optional<int> c = std::nullopt, double t_begin = 0.0,
                                     double t_end = 1.0) {
  if (n_steps < 1) throw DomainError("euler_rollout: n_steps must be >= 1");
  if (cloud.dim() != p.d) throw DataError("cloud dimension does not match model dimension");
  const auto n = cloud.points.cols();
  const auto cond = detail::cond_vector(p, n, c);
  InferenceResult r;
  const auto t0 = std::chrono::steady_clock::now();
  Mat x = cloud.points;
  Vec m = cloud.masses;
  const double dt = (t_end - t_begin) / n_steps;
  for (int k = 0; k < n_steps; ++k) {
    const double t = t_begin + k * dt;
    const Vec tv = Vec::Constant(n, t);
    const BatchOutput out = forward_batch(p, pack_inputs(p, x, tv, tv, cond));
    x += dt * out.v;
    m = m.cwiseProduct((dt * out.h).array().exp().matrix());
  }
  r.wall_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now() - t0).count();
  r.points = std::move(x);
  r.masses = std::move(m);
  return r;
}

/// n_out i.i.d. indices drawn with probability mass_i / sum(mass).
inline Mat resample_by_weight(const Mat& points, const Vec& masses, std::size_t n_out, std::mt19937_64& rng) {
  if (!(masses.sum() > 0.0)) throw DataError("resample_by_weight: total mass is zero");
  std::discrete_distribution<Eigen::Index> pick(masses.data(), masses.data() + masses.size());
  Mat out(points.rows(), static_cast<Eigen::Index>(n_out));
  for (Eigen::Index j = 0; j < out.cols(); ++j) out.col(j) = points.col(pick(rng));
  return out;
}

/// Partition refining a grid: each interval split into `sub` equal steps.
inline std::vector<double> refine_partition(const std::vector<double>& grid, int sub) {
  if (sub < 1) throw DomainError("refine_partition: sub must be >= 1");
  std::vector<double> out{grid.front()};
  for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
    for (int s = 1; s <= sub; ++s) {
      out.push_back(s == sub ? grid[k + 1] : grid[k] + (grid[k + 1] - grid[k]) * s / sub);
    }
  }
  return out;
}

}  // namespace wfrmfm
