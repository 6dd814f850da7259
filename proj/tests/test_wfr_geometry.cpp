#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "wfrmfm/wfr_geometry.hpp"

using namespace wfrmfm;

namespace {

Vec vec2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

// Composite Simpson rule, used as the independent quadrature oracle.
template <typename F>
double simpson(F f, double a, double b, int n) {
  if (n % 2) ++n;
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int k = 1; k < n; ++k) s += (k % 2 ? 4.0 : 2.0) * f(a + k * h);
  return s * h / 3.0;
}

struct RandomPair {
  Vec x0, x1;
  double m0, m1, delta;
};

RandomPair random_pair(std::mt19937_64& rng, int d) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RandomPair p;
  p.delta = 0.3 + 1.5 * u(rng);
  p.m0 = 0.1 + 3.0 * u(rng);
  p.m1 = 0.1 + 3.0 * u(rng);
  p.x0 = Vec::Zero(d);
  Vec dir(d);
  for (int k = 0; k < d; ++k) dir[k] = u(rng) - 0.5;
  dir.normalize();
  p.x0 = Vec::Random(d);
  p.x1 = p.x0 + (0.95 * std::numbers::pi * p.delta * u(rng)) * dir;
  return p;
}

}  // namespace

TEST(CosPlus, Examples) {
  EXPECT_EQ(cos_plus(0.0), 1.0);
  EXPECT_EQ(cos_plus(2.0), 0.0);
  EXPECT_NEAR(cos_plus(std::numbers::pi / 4), 0.7071067811865476, 1e-15);
  EXPECT_THROW(cos_plus(-1e-3), DomainError);
}

TEST(CosPlus, Monotone) {
  double prev = 1.0;
  for (double x = 0.0; x < 3.0; x += 0.01) {
    const double c = cos_plus(x);
    EXPECT_LE(c, prev);
    EXPECT_GE(c, 0.0);
    prev = c;
  }
}

TEST(WfrDistance, Examples) {
  const Vec p = vec2(0.3, -1.2);
  EXPECT_EQ(wfr_dd_sq(1, p, 1, p, 1.0), 0.0);
  const double delta = 0.7;
  EXPECT_DOUBLE_EQ(wfr_dd_sq(1, vec2(0, 0), 1, vec2(std::numbers::pi * delta, 0), delta),
                   4 * delta * delta);
  EXPECT_DOUBLE_EQ(wfr_dd_sq(1, vec2(0, 0), 0, vec2(0, 0), 1.0), 2.0);
}

TEST(WfrDistance, SymmetryExact) {
  std::mt19937_64 rng(11);
  for (int k = 0; k < 200; ++k) {
    auto p = random_pair(rng, 3);
    EXPECT_EQ(wfr_dd_sq(p.m0, p.x0, p.m1, p.x1, p.delta), wfr_dd_sq(p.m1, p.x1, p.m0, p.x0, p.delta));
    EXPECT_EQ(wfr_dd_sq(p.m0, p.x0, p.m0, p.x0, p.delta), 0.0);
  }
}

TEST(GeodesicConstants, Stationary) {
  auto gc = geodesic_constants(vec2(1, 2), vec2(1, 2), 1, 1, 1.0);
  EXPECT_EQ(gc.A, 0.0);
  EXPECT_EQ(gc.B, 0.0);
  EXPECT_EQ(gc.tau, 0.0);
  EXPECT_EQ(gc.omega0.norm(), 0.0);
  EXPECT_FALSE(gc.transports());
}

TEST(GeodesicConstants, PureDeath) {
  auto gc = geodesic_constants(vec2(0, 0), vec2(0.4, 0.1), 1, 0, 1.0);
  EXPECT_DOUBLE_EQ(gc.A, 1.0);
  EXPECT_DOUBLE_EQ(gc.B, 1.0);
  EXPECT_EQ(gc.omega0.norm(), 0.0);
  for (double t : {0.0, 0.2, 0.5, 0.9}) EXPECT_NEAR(mass_at(gc, t), (1 - t) * (1 - t), 1e-15);
}

TEST(GeodesicConstants, BalancedPair) {
  const double delta = 0.8, d = 1.3;
  auto gc = geodesic_constants(vec2(0, 0), vec2(0, d), 1, 1, delta);
  const double c = std::cos(d / (2 * delta));
  EXPECT_NEAR(gc.A, 2 * (1 - c), 1e-15);
  EXPECT_NEAR(gc.B, 1 - c, 1e-15);
  EXPECT_NEAR(gc.omega0.norm(), 2 * delta * std::sin(d / (2 * delta)), 1e-15);
  EXPECT_NEAR(gc.l[1], 1.0, 1e-15);
}

TEST(GeodesicConstants, OutOfCone) {
  EXPECT_THROW(geodesic_constants(vec2(0, 0), vec2(std::numbers::pi, 0), 1, 1, 1.0), OutOfConeError);
  EXPECT_THROW(geodesic_constants(vec2(0, 0), vec2(4, 0), 1, 1, 1.0), OutOfConeError);
  EXPECT_NO_THROW(geodesic_constants(vec2(0, 0), vec2(3.14, 0), 1, 1, 1.0));
}

TEST(GeodesicConstants, RejectsBadMasses) {
  EXPECT_THROW(geodesic_constants(vec2(0, 0), vec2(0, 0), 0, 1, 1.0), DomainError);
  EXPECT_THROW(geodesic_constants(vec2(0, 0), vec2(0, 0), 1, -1, 1.0), DomainError);
}

TEST(GeodesicConstants, MomentumVanishesIffDegenerate) {
  std::mt19937_64 rng(5);
  for (int k = 0; k < 100; ++k) {
    auto p = random_pair(rng, 2);
    auto gc = geodesic_constants(p.x0, p.x1, p.m0, p.m1, p.delta);
    EXPECT_GT(gc.omega0.norm(), 0.0);
    EXPECT_GT(gc.tau * gc.m0 * gc.m1, 0.0);
    auto g0 = geodesic_constants(p.x0, p.x1, p.m0, 0.0, p.delta);
    EXPECT_EQ(g0.omega0.norm(), 0.0);
  }
}

TEST(MassCurve, Examples) {
  auto flat = geodesic_constants(vec2(0, 0), vec2(0, 0), 1, 1, 1.0);
  EXPECT_EQ(mass_at(flat, 0.5), 1.0);
  auto death = geodesic_constants(vec2(0, 0), vec2(0, 0), 1, 0, 1.0);
  EXPECT_DOUBLE_EQ(mass_at(death, 0.5), 0.25);
  auto grow = geodesic_constants(vec2(0, 0), vec2(0, 0), 1, 4, 1.0);
  EXPECT_DOUBLE_EQ(grow.A, 1.0);
  EXPECT_DOUBLE_EQ(grow.B, -1.0);
  EXPECT_DOUBLE_EQ(mass_at(grow, 1.0), 4.0);
}

TEST(MassCurve, EndpointsAndPositivity) {
  std::mt19937_64 rng(7);
  for (int k = 0; k < 1000; ++k) {
    auto p = random_pair(rng, 3);
    auto gc = geodesic_constants(p.x0, p.x1, p.m0, p.m1, p.delta);
    EXPECT_NEAR(mass_at(gc, 0.0), p.m0, 1e-10 * p.m0);
    EXPECT_NEAR(mass_at(gc, 1.0), p.m1, 1e-10 * p.m1);
    for (double t = 0.05; t < 1.0; t += 0.05) EXPECT_GT(mass_at(gc, t), 0.0);
  }
}

TEST(MassCurve, DerivativeMatchesFiniteDifference) {
  std::mt19937_64 rng(8);
  for (int k = 0; k < 100; ++k) {
    auto p = random_pair(rng, 2);
    auto gc = geodesic_constants(p.x0, p.x1, p.m0, p.m1, p.delta);
    for (double t = 0.1; t < 0.95; t += 0.2) {
      const double h = 1e-6;
      const double fd = (mass_at(gc, t + h) - mass_at(gc, t - h)) / (2 * h);
      const double exact = 2 * gc.A * t - 2 * gc.B;
      EXPECT_NEAR(fd, exact, 1e-6 * std::max(1.0, std::abs(exact)));
    }
  }
}

TEST(ArrivalTime, Examples) {
  // A = 2B = 1 with unit masses: cos(theta) = 1/2.
  const double delta = 1.0;
  const double d = 2 * delta * std::numbers::pi / 3;
  auto gc = geodesic_constants(vec2(0, 0), vec2(d, 0), 1, 1, delta);
  EXPECT_NEAR(gc.A, 1.0, 1e-14);
  EXPECT_NEAR(gc.B, 0.5, 1e-14);
  EXPECT_EQ(lambda_at(gc, 0.0), 0.0);
  const double quad = simpson([](double s) { return 1.0 / (s * s - s + 1.0); }, 0.0, 1.0, 2000);
  EXPECT_NEAR(lambda_at(gc, 1.0), quad, 1e-8);
}

TEST(ArrivalTime, NearlyConstantMassApproachesT) {
  auto gc = geodesic_constants(vec2(0, 0), vec2(1e-4, 0), 1, 1, 1.0);
  for (double t : {0.1, 0.5, 1.0}) EXPECT_NEAR(lambda_at(gc, t), t, 1e-8);
}

TEST(ArrivalTime, DegenerateThrows) {
  auto gc = geodesic_constants(vec2(0, 0), vec2(0, 0), 1, 2, 1.0);
  EXPECT_THROW(lambda_at(gc, 0.5), NumericError);
}

TEST(ArrivalTime, MatchesQuadratureAndIncreases) {
  std::mt19937_64 rng(9);
  for (int k = 0; k < 50; ++k) {
    auto p = random_pair(rng, 2);
    auto gc = geodesic_constants(p.x0, p.x1, p.m0, p.m1, p.delta);
    double prev = 0.0;
    for (double t = 0.1; t <= 1.0001; t += 0.1) {
      const double quad = simpson([&](double s) { return 1.0 / mass_at(gc, s); }, 0.0, t, 4000);
      const double lam = lambda_at(gc, t);
      EXPECT_NEAR(lam, quad, 1e-7 * std::max(1.0, quad));
      EXPECT_GT(lam, prev);
      prev = lam;
    }
  }
}

TEST(PathState, Stationary) {
  auto gc = geodesic_constants(vec2(0.5, 0.5), vec2(0.5, 0.5), 1, 1, 1.0);
  for (double t : {0.0, 0.3, 1.0}) {
    auto st = dirac_path_state(gc, t);
    EXPECT_EQ(st.position, vec2(0.5, 0.5));
    EXPECT_EQ(st.mass, 1.0);
    EXPECT_EQ(st.u.norm(), 0.0);
    EXPECT_EQ(st.g, 0.0);
  }
}

TEST(PathState, PureDeathGrowth) {
  auto gc = geodesic_constants(vec2(0, 0), vec2(0.3, 0), 1, 0, 1.0);
  auto st = dirac_path_state(gc, 0.5);
  EXPECT_EQ(st.position, vec2(0, 0));
  EXPECT_DOUBLE_EQ(st.mass, 0.25);
  EXPECT_EQ(st.u.norm(), 0.0);
  EXPECT_DOUBLE_EQ(st.g, -4.0);
  const double h = 1e-6;
  const double fd = (std::log(mass_at(gc, 0.5 + h)) - std::log(mass_at(gc, 0.5 - h))) / (2 * h);
  EXPECT_NEAR(fd, -4.0, 1e-6);
  EXPECT_THROW(dirac_path_state(gc, 1.0), NumericError);
}

TEST(PathState, ReachesEndpoint) {
  std::mt19937_64 rng(10);
  for (int k = 0; k < 200; ++k) {
    auto p = random_pair(rng, 3);
    auto gc = geodesic_constants(p.x0, p.x1, p.m0, p.m1, p.delta);
    auto st = dirac_path_state(gc, 1.0);
    EXPECT_LT((st.position - p.x1).norm(), 1e-12 * (1 + p.x1.norm()));
  }
}

TEST(PathState, GrowthIntegratesToMassRatio) {
  std::mt19937_64 rng(12);
  for (int k = 0; k < 50; ++k) {
    auto p = random_pair(rng, 2);
    auto gc = geodesic_constants(p.x0, p.x1, p.m0, p.m1, p.delta);
    const double integral = simpson([&](double t) { return dirac_path_state(gc, t).g; }, 0, 1, 4000);
    EXPECT_NEAR(std::exp(integral), p.m1 / p.m0, 1e-6 * p.m1 / p.m0);
  }
}

TEST(PathState, VelocityMatchesPositionDerivative) {
  std::mt19937_64 rng(13);
  for (int k = 0; k < 100; ++k) {
    auto p = random_pair(rng, 3);
    auto gc = geodesic_constants(p.x0, p.x1, p.m0, p.m1, p.delta);
    for (double t = 0.1; t < 0.95; t += 0.2) {
      const double h = 1e-5;
      const Vec fd = (dirac_path_state(gc, t + h).position - dirac_path_state(gc, t - h).position) / (2 * h);
      const Vec u = dirac_path_state(gc, t).u;
      EXPECT_LT((fd - u).norm(), 1e-6 * std::max(1.0, u.norm()));
    }
  }
}

TEST(PathState, ActionEqualsClosedFormDistance) {
  std::mt19937_64 rng(14);
  for (int k = 0; k < 200; ++k) {
    auto p = random_pair(rng, 2);
    auto gc = geodesic_constants(p.x0, p.x1, p.m0, p.m1, p.delta);
    const double action = simpson(
        [&](double t) {
          auto st = dirac_path_state(gc, t);
          return 0.5 * (st.u.squaredNorm() + p.delta * p.delta * st.g * st.g) * st.mass;
        },
        0, 1, 2000);
    const double closed = wfr_dd_sq(p.m0, p.x0, p.m1, p.x1, p.delta);
    EXPECT_NEAR(action, closed, 1e-4 * closed);
  }
}
