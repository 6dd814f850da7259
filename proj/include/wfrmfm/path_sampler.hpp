#pragma once

// Training tuples for mean flow matching: coupled pairs drawn from the
// semi-coupling, time pairs inside a segment, a point on the traveling
// Gaussian and its conditional fields, and detached regression targets.

#include <cmath>
#include <optional>
#include <random>
#include <unordered_map>
#include <utility>
#include <vector>

#include "wfrmfm/meanfield_net.hpp"
#include "wfrmfm/oet.hpp"
#include "wfrmfm/wfr_geometry.hpp"

namespace wfrmfm {

struct TimePair {
  double t = 0.0;
  double T = 0.0;
};

/// With probability 1 - p_diff returns t = T ~ U(lo, hi); otherwise the
/// ordered pair of two independent U(lo, hi) draws.
inline TimePair sample_time_pair(double p_diff, double lo, double hi, std::mt19937_64& rng) {
  if (p_diff < 0.0 || p_diff > 1.0) throw DomainError("sample_time_pair: p_diff outside [0, 1]");
  if (!(lo < hi)) throw DomainError("sample_time_pair: empty interval");
  std::uniform_real_distribution<double> unif(lo, hi);
  std::bernoulli_distribution differ(p_diff);
  if (!differ(rng)) {
    const double t = unif(rng);
    return {t, t};
  }
  const double a = unif(rng);
  const double b = unif(rng);
  return {std::min(a, b), std::max(a, b)};
}

struct Segment {
  double lo = 0.0;  // global start time
  double hi = 1.0;  // global end time
  double length() const { return hi - lo; }
};

struct RawTuple {
  Vec x;
  double t = 0.0;
  double T = 0.0;
  Vec u;
  double g = 0.0;
  double s = 0.0;     // local time on the geodesic
  double mass = 1.0;  // m(s)
};

/// Point and fields on the traveling Gaussian at global times (t, T) inside
/// `seg`. The geodesic lives in local unit time; fields are divided by the
/// segment length to express them per unit global time.
inline RawTuple sample_tuple_at(const GeodesicConstants& gc, const Segment& seg, double sigma, TimePair tp,
                                std::mt19937_64& rng) {
  if (sigma < 0.0) throw DomainError("sample_tuple: sigma must be nonnegative");
  RawTuple r;
  r.t = tp.t;
  r.T = tp.T;
  r.s = (tp.t - seg.lo) / seg.length();
  const PathState st = dirac_path_state(gc, r.s);
  r.x = st.position;
  if (sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, sigma);
    for (Eigen::Index k = 0; k < r.x.size(); ++k) r.x[k] += noise(rng);
  }
  r.u = st.u / seg.length();
  r.g = st.g / seg.length();
  r.mass = st.mass;
  return r;
}

inline RawTuple sample_tuple(const GeodesicConstants& gc, const Segment& seg, double sigma, double p_diff,
                             std::mt19937_64& rng) {
  const TimePair tp = sample_time_pair(p_diff, seg.lo, seg.hi, rng);
  return sample_tuple_at(gc, seg, sigma, tp, rng);
}

/// Loss weight of a tuple drawn with probability proportional to gamma_0:
/// the geodesic mass m(s). `sampling_prob` only guards against pairs that
/// could not have been drawn.
inline double tuple_weight(const GeodesicConstants& gc, double s, double sampling_prob) {
  if (!(sampling_prob > 0.0)) throw DomainError("tuple_weight: pair has zero sampling probability");
  return mass_at(gc, s);
}

struct Targets {
  Mat v;  // d x B
  Vec h;  // B
};

/// v_target = u + (T - t) dv, h_target = g + (T - t) dh, where (dv, dh) is
/// the JVP of the current network along (u, 1, 0). The result is a plain
/// value; nothing downstream differentiates through it.
inline Targets assemble_targets(const MeanFieldParams& p, const Mat& X, const Mat& u, const Vec& g) {
  const auto B = X.cols();
  Mat dX = Mat::Zero(X.rows(), B);
  dX.topRows(p.d) = u;
  dX.row(p.d).setOnes();
  const BatchJvp j = jvp_batch(p, X, dX);
  Targets out;
  out.v.resize(p.d, B);
  out.h.resize(B);
  for (Eigen::Index c = 0; c < B; ++c) {
    const double gap = X(p.d + 1, c) - X(p.d, c);
    out.v.col(c) = u.col(c) + gap * j.dv.col(c);
    out.h[c] = g[c] + gap * j.dh[c];
  }
  return out;
}

inline std::pair<Vec, double> assemble_targets(const MeanFieldParams& p, const RawTuple& r,
                                               std::optional<int> c = std::nullopt) {
  std::vector<int> cond;
  if (c) cond.push_back(*c);
  const Mat X = pack_inputs(p, r.x, Vec::Constant(1, r.t), Vec::Constant(1, r.T), cond);
  const Targets tg = assemble_targets(p, X, r.u, Vec::Constant(1, r.g));
  return {tg.v.col(0), tg.h[0]};
}

// ---------------------------------------------------------------------------
// Pair sampling from a semi-coupling.

/// One coupled pair in unit-source-mass form: the source point starts with
/// mass 1 and ends with mass m1.
struct CoupledPair {
  Eigen::Index source = 0;
  Eigen::Index target = -1;  // -1 for a pure-death pair
  double probability = 0.0;  // gamma_0 entry normalised over the coupling
  double m1 = 0.0;
};

/// Draws pairs with probability proportional to gamma_0, including a
/// pure-death pseudo-pair for every source row with no plan mass, so that
/// each source point is drawn in proportion to its mass.
class PairSampler {
 public:
  PairSampler(const TransportPlan& plan, const SemiCoupling& sc, const WeightedCloud& source,
              const WeightedCloud& target)
      : source_(&source), target_(&target) {
    const Mat m1 = pair_masses(plan, sc, target);
    std::vector<double> w;
    for (Eigen::Index i = 0; i < sc.entries.rows(); ++i) {
      for (Eigen::Index j = 0; j < sc.entries.cols(); ++j) {
        if (sc.entries(i, j) > 0.0) {
          pairs_.push_back({i, j, 0.0, m1(i, j)});
          w.push_back(sc.entries(i, j));
        }
      }
      if (sc.pure_death[static_cast<std::size_t>(i)] && sc.death_mass[i] > 0.0) {
        pairs_.push_back({i, -1, 0.0, 0.0});
        w.push_back(sc.death_mass[i]);
      }
    }
    if (pairs_.empty()) throw DataError("semi-coupling carries no mass");
    double total = 0.0;
    for (double v : w) total += v;
    for (std::size_t k = 0; k < pairs_.size(); ++k) pairs_[k].probability = w[k] / total;
    dist_ = std::discrete_distribution<std::size_t>(w.begin(), w.end());
  }

  std::size_t draw(std::mt19937_64& rng) { return dist_(rng); }
  const CoupledPair& pair(std::size_t k) const { return pairs_[k]; }
  std::size_t size() const { return pairs_.size(); }

  /// Geodesic constants of pair k, computed on first use. Throws
  /// OutOfConeError for pairs outside the cone.
  const GeodesicConstants& constants(std::size_t k, double delta) {
    auto it = cache_.find(k);
    if (it != cache_.end()) return it->second;
    const CoupledPair& cp = pairs_[k];
    const Vec x0 = source_->points.col(cp.source);
    const Vec x1 = cp.target >= 0 ? Vec(target_->points.col(cp.target)) : x0;
    return cache_.emplace(k, geodesic_constants(x0, x1, 1.0, cp.m1, delta)).first->second;
  }

 private:
  const WeightedCloud* source_;
  const WeightedCloud* target_;
  std::vector<CoupledPair> pairs_;
  std::discrete_distribution<std::size_t> dist_;
  std::unordered_map<std::size_t, GeodesicConstants> cache_;
};

/// 0.05 x median nearest-neighbour distance within the cloud (0 for a
/// single point).
inline double default_sigma(const WeightedCloud& c) {
  const auto n = c.points.cols();
  if (n < 2) return 0.0;
  std::vector<double> nn(static_cast<std::size_t>(n), kInf);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double d = (c.points.col(i) - c.points.col(j)).norm();
      nn[static_cast<std::size_t>(i)] = std::min(nn[static_cast<std::size_t>(i)], d);
      nn[static_cast<std::size_t>(j)] = std::min(nn[static_cast<std::size_t>(j)], d);
    }
  }
  const auto mid = nn.begin() + static_cast<std::ptrdiff_t>(nn.size() / 2);
  std::nth_element(nn.begin(), mid, nn.end());
  return 0.05 * *mid;
}

}  // namespace wfrmfm
