#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace wfrmfm {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Errors raised when inputs leave the domain where the math is defined.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Malformed files, inconsistent shapes, unknown identifiers.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values or collapsed quantities encountered during computation.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Empirical measure: points in R^d (one per column) with nonnegative masses.
struct WeightedCloud {
  Mat points;  // d x n
  Vec masses;  // n
  double time = 0.0;
  std::optional<int> condition_id;

  std::size_t size() const { return static_cast<std::size_t>(points.cols()); }
  int dim() const { return static_cast<int>(points.rows()); }
  double total_mass() const { return masses.sum(); }

  void validate() const {
    if (masses.size() != points.cols()) {
      throw DataError("cloud has " + std::to_string(points.cols()) + " points but " +
                      std::to_string(masses.size()) + " masses");
    }
    bool any_positive = false;
    for (Eigen::Index i = 0; i < masses.size(); ++i) {
      if (!(masses[i] >= 0.0) || !std::isfinite(masses[i])) {
        throw DataError("cloud mass " + std::to_string(i) + " is negative or non-finite");
      }
      any_positive = any_positive || masses[i] > 0.0;
    }
    if (!any_positive) throw DataError("cloud has no positive mass");
  }
};

inline WeightedCloud uniform_cloud(Mat points, double mass_each, double time = 0.0) {
  WeightedCloud c;
  const auto n = points.cols();
  c.points = std::move(points);
  c.masses = Vec::Constant(n, mass_each);
  c.time = time;
  return c;
}

}  // namespace wfrmfm
