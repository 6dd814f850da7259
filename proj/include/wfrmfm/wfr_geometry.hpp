#pragma once

// Closed-form Wasserstein-Fisher-Rao geometry between two weighted Diracs:
// distance, traveling-Dirac constants, mass curve, arrival-time integral and
// the instantaneous velocity / growth fields along the geodesic.

#include <cmath>
#include <numbers>
#include <string>

#include "wfrmfm/config.hpp"
#include "wfrmfm/types.hpp"

namespace wfrmfm {

class OutOfConeError : public DomainError {
 public:
  using DomainError::DomainError;
};

/// cos(min(x, pi/2)) for x >= 0.
inline double cos_plus(double x) {
  if (x < 0.0 || std::isnan(x)) throw DomainError("cos_plus: negative argument");
  if (x >= std::numbers::pi / 2) return 0.0;
  return std::cos(x);
}

/// Squared WFR distance between m0*delta_{x0} and m1*delta_{x1}.
inline double wfr_dd_sq(double m0, const Vec& x0, double m1, const Vec& x1, double delta) {
  if (m0 < 0.0 || m1 < 0.0) throw DomainError("wfr_dd_sq: negative mass");
  if (!(delta > 0.0)) throw DomainError("wfr_dd_sq: delta must be positive");
  const double dist = (x0 - x1).norm();
  return 2.0 * delta * delta *
         (m0 + m1 - 2.0 * std::sqrt(m0 * m1) * cos_plus(dist / (2.0 * delta)));
}

struct GeodesicConstants {
  double A = 0.0;
  double B = 0.0;
  Vec omega0;
  double tau = 0.0;
  double m0 = 1.0;
  double m1 = 1.0;
  Vec l;
  Vec x0;
  Vec x1;
  double delta = 1.0;
  // Half-angle ||x1 - x0|| / (2 delta), kept so the arrival-time terms can be
  // formed without cancellation.
  double theta = 0.0;

  bool transports() const { return omega0.norm() >= tol::kMomentum; }

  // m0*A - B^2, evaluated through the identity m0*m1*sin^2(theta).
  double denom() const {
    const double s = std::sin(theta);
    return m0 * m1 * s * s;
  }
};

/// Traveling-Dirac constants for the pair (x0, m0) -> (x1, m1).
/// Throws OutOfConeError when ||x1 - x0|| >= pi * delta.
inline GeodesicConstants geodesic_constants(const Vec& x0, const Vec& x1, double m0, double m1,
                                            double delta) {
  if (!(delta > 0.0)) throw DomainError("geodesic_constants: delta must be positive");
  if (!(m0 > 0.0)) throw DomainError("geodesic_constants: m0 must be positive");
  if (m1 < 0.0) throw DomainError("geodesic_constants: m1 must be nonnegative");
  if (x0.size() != x1.size()) throw DomainError("geodesic_constants: dimension mismatch");

  const Vec diff = x1 - x0;
  const double dist = diff.norm();
  if (!(dist < std::numbers::pi * delta)) {
    throw OutOfConeError("pair distance " + std::to_string(dist) + " outside the cone pi*delta = " +
                         std::to_string(std::numbers::pi * delta));
  }

  GeodesicConstants gc;
  gc.x0 = x0;
  gc.x1 = x1;
  gc.m0 = m0;
  gc.m1 = m1;
  gc.delta = delta;
  gc.theta = dist / (2.0 * delta);
  gc.tau = std::tan(gc.theta);
  gc.l = dist > 0.0 ? Vec(diff / dist) : Vec(Vec::Zero(x0.size()));

  // sqrt(m0 m1 / (1 + tau^2)) == sqrt(m0 m1) cos(theta) on [0, pi/2).
  const double root = std::sqrt(m0 * m1);
  const double s = root * std::cos(gc.theta);
  gc.A = m0 + m1 - 2.0 * s;
  gc.B = m0 - s;
  // 2 delta tau s == 2 delta sqrt(m0 m1) sin(theta)
  gc.omega0 = (2.0 * delta * root * std::sin(gc.theta)) * gc.l;
  return gc;
}

/// Geodesic mass m(t) = A t^2 - 2 B t + m0.
inline double mass_at(const GeodesicConstants& gc, double t) {
  return gc.A * t * t - 2.0 * gc.B * t + gc.m0;
}

/// Arrival-time integral Lambda_t = int_0^t ds / m(s).
/// Requires m0*A - B^2 > tol::kDenom; callers with no transport skip it.
inline double lambda_at(const GeodesicConstants& gc, double t) {
  const double D = gc.denom();
  if (!(D > tol::kDenom)) {
    throw NumericError("lambda_at: degenerate denominator m0*A - B^2 = " + std::to_string(D));
  }
  const double r = std::sqrt(D);
  // arctan((At-B)/r) - arctan(-B/r), folded into a single atan2 and divided
  // through by A > 0 (A vanishes only without transport).
  return std::atan2(t * r, gc.m0 - gc.B * t) / r;
}

struct PathState {
  Vec position;
  double mass = 0.0;
  Vec u;
  double g = 0.0;
};

/// Position, mass, velocity and growth rate of the traveling Dirac at local time t.
inline PathState dirac_path_state(const GeodesicConstants& gc, double t) {
  PathState st;
  st.mass = mass_at(gc, t);
  if (st.mass <= tol::kMass) {
    throw NumericError("dirac_path_state: geodesic mass collapsed to " + std::to_string(st.mass) +
                       " at t = " + std::to_string(t));
  }
  if (gc.transports()) {
    // omega0 * Lambda_t == 2 delta l * atan2(t sqrt(D), m0 - B t); this form
    // stays accurate when the denominator is tiny.
    const double r = std::sqrt(gc.denom());
    st.position = gc.x0 + (2.0 * gc.delta * std::atan2(t * r, gc.m0 - gc.B * t)) * gc.l;
  } else {
    st.position = gc.x0;
  }
  st.u = gc.omega0 / st.mass;
  st.g = (2.0 * gc.A * t - 2.0 * gc.B) / st.mass;
  return st;
}

}  // namespace wfrmfm
