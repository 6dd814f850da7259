#pragma once

// Fixed numeric guards shared by the geometry, solver and sampler code.

namespace wfrmfm {
namespace tol {

// Geodesic mass below which velocity/growth are not evaluated.
inline constexpr double kMass = 1e-9;

// Minimum m0*A - B^2 for the closed-form arrival-time integral.
inline constexpr double kDenom = 1e-12;

// Momentum norm below which a geodesic is treated as pure mass change.
inline constexpr double kMomentum = 1e-12;

// Finite stand-in for an infinite transport cost inside the scaling loop.
inline constexpr double kInfiniteCost = 1e9;

}  // namespace tol
}  // namespace wfrmfm
