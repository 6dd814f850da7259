#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <random>

#include "wfrmfm/oet.hpp"
#include "wfrmfm/oet_oracle.hpp"

using namespace wfrmfm;

namespace {

WeightedCloud cloud(std::initializer_list<std::pair<double, double>> pts, std::initializer_list<double> masses) {
  WeightedCloud c;
  c.points.resize(2, static_cast<Eigen::Index>(pts.size()));
  Eigen::Index k = 0;
  for (auto [x, y] : pts) {
    c.points(0, k) = x;
    c.points(1, k) = y;
    ++k;
  }
  c.masses.resize(static_cast<Eigen::Index>(masses.size()));
  k = 0;
  for (double m : masses) c.masses[k++] = m;
  return c;
}

WeightedCloud random_cloud(std::mt19937_64& rng, int n, double spread) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  WeightedCloud c;
  c.points.resize(2, n);
  c.masses.resize(n);
  for (int k = 0; k < n; ++k) {
    c.points(0, k) = spread * u(rng);
    c.points(1, k) = spread * u(rng);
    c.masses[k] = 0.2 + u(rng);
  }
  return c;
}

TransportPlan plan_from(const Mat& m) {
  TransportPlan p;
  p.entries = m;
  for (Eigen::Index i = 0; i < m.rows(); ++i) p.source_index.push_back(static_cast<std::size_t>(i));
  for (Eigen::Index j = 0; j < m.cols(); ++j) p.target_index.push_back(static_cast<std::size_t>(j));
  return p;
}

}  // namespace

TEST(CostMatrix, Examples) {
  const double delta = 0.9;
  auto a = cloud({{0, 0}, {0, 0}, {0, 0}}, {1, 1, 1});
  auto b = cloud({{0, 0}, {std::numbers::pi * delta, 0}, {0, std::numbers::pi / 2 * delta}}, {1, 1, 1});
  Mat C = wfr_cost_matrix(a, b, delta);
  EXPECT_EQ(C(0, 0), 0.0);
  EXPECT_TRUE(std::isinf(C(1, 1)));
  EXPECT_NEAR(C(2, 2), 0.6931471805599453, 1e-14);
}

TEST(SolveOet, CoincidentDirac) {
  auto a = cloud({{0, 0}}, {1});
  for (double eps : {1e-2, 1e-3}) {
    auto plan = solve_oet(a, a, 1.0, eps);
    EXPECT_TRUE(plan.converged);
    EXPECT_NEAR(plan.entries(0, 0), 1.0, 0.02);
    EXPECT_NEAR(oet_objective(wfr_cost_matrix(a, a, 1.0), plan.entries, a.masses, a.masses), 0.0, 1e-6);
  }
}

TEST(SolveOet, OutOfConeDirac) {
  const double delta = 0.5;
  auto a = cloud({{0, 0}}, {1});
  auto b = cloud({{std::numbers::pi * delta, 0}}, {1});
  auto plan = solve_oet(a, b, delta, 1e-2);
  EXPECT_EQ(plan.entries(0, 0), 0.0);
  const double obj = oet_objective(wfr_cost_matrix(a, b, delta), plan.entries, a.masses, b.masses);
  EXPECT_DOUBLE_EQ(obj, 2.0);
  EXPECT_DOUBLE_EQ(2 * delta * delta * obj, 4 * delta * delta);
}

TEST(SolveOet, MatchesOracleOnRandomThreeByThree) {
  std::mt19937_64 rng(21);
  auto a = random_cloud(rng, 3, 2.0);
  auto b = random_cloud(rng, 3, 2.0);
  const double delta = 0.8;
  Mat C = wfr_cost_matrix(a, b, delta);
  auto plan = solve_oet(a, b, delta, 1e-3);
  ASSERT_TRUE(plan.converged);
  auto ref = brute_force_oet(a, b, delta);
  const double obj = oet_objective(C, plan.entries, a.masses, b.masses);
  EXPECT_LE(std::abs(obj - ref.objective), 0.01 * ref.objective);
}

TEST(SolveOet, InfiniteCostEntriesExactlyZero) {
  std::mt19937_64 rng(22);
  for (int k = 0; k < 20; ++k) {
    auto a = random_cloud(rng, 4, 3.0);
    auto b = random_cloud(rng, 4, 3.0);
    Mat C = wfr_cost_matrix(a, b, 0.5);
    auto plan = solve_oet(a, b, 0.5, 1e-2);
    for (Eigen::Index i = 0; i < 4; ++i) {
      for (Eigen::Index j = 0; j < 4; ++j) {
        if (std::isinf(C(i, j))) EXPECT_EQ(plan.entries(i, j), 0.0);
        EXPECT_GE(plan.entries(i, j), 0.0);
      }
    }
  }
}

TEST(SolveOet, IsolatedPointCarriesNoMass) {
  auto a = cloud({{0, 0}, {10, 10}}, {1, 1});
  auto b = cloud({{0.1, 0}}, {1});
  auto plan = solve_oet(a, b, 1.0, 1e-2);
  EXPECT_EQ(plan.entries(1, 0), 0.0);
  EXPECT_GT(plan.entries(0, 0), 0.5);
}

TEST(SolveOet, SymmetricUnderSwap) {
  std::mt19937_64 rng(23);
  for (int k = 0; k < 10; ++k) {
    auto a = random_cloud(rng, 4, 1.5);
    auto b = random_cloud(rng, 3, 1.5);
    auto p = solve_oet(a, b, 1.0, 5e-2);
    auto q = solve_oet(b, a, 1.0, 5e-2);
    EXPECT_LT((p.entries - q.entries.transpose()).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(SolveOet, NonConvergenceIsReported) {
  std::mt19937_64 rng(24);
  auto a = random_cloud(rng, 4, 1.5);
  auto b = random_cloud(rng, 4, 1.5);
  auto plan = solve_oet(a, b, 1.0, 1e-3, 3, 1e-14);
  EXPECT_FALSE(plan.converged);
  EXPECT_EQ(plan.iterations, 3);
}

TEST(SolveOet, GapShrinksAsEpsilonDecreases) {
  std::mt19937_64 rng(25);
  for (int k = 0; k < 20; ++k) {
    const int n0 = 2 + static_cast<int>(rng() % 3), n1 = 2 + static_cast<int>(rng() % 3);
    auto a = random_cloud(rng, n0, 2.0);
    auto b = random_cloud(rng, n1, 2.0);
    const double delta = 0.7;
    Mat C = wfr_cost_matrix(a, b, delta);
    const double best = brute_force_oet(a, b, delta).objective;
    double prev = kInf;
    for (double eps : {1e-1, 1e-2, 1e-3}) {
      auto plan = solve_oet(a, b, delta, eps);
      const double gap = oet_objective(C, plan.entries, a.masses, b.masses) - best;
      EXPECT_GE(gap, -1e-9);
      EXPECT_LE(gap, prev + 1e-9);
      prev = gap;
    }
  }
}

TEST(BruteForce, Examples) {
  auto a = cloud({{0, 0}}, {1});
  auto r = brute_force_oet(a, a, 1.0);
  EXPECT_NEAR(r.plan(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(r.objective, 0.0, 1e-12);

  auto far = cloud({{5, 0}}, {1});
  r = brute_force_oet(a, far, 1.0);
  EXPECT_EQ(r.plan(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(r.objective, 2.0);

  auto a2 = cloud({{0, 0}, {1, 0}}, {1, 1});
  auto b2 = cloud({{0.2, 0}, {5, 0}}, {1, 1});
  r = brute_force_oet(a2, b2, 1.0);
  EXPECT_EQ(r.plan(0, 1), 0.0);
  EXPECT_EQ(r.plan(1, 1), 0.0);
}

TEST(BruteForce, SatisfiesStationarity) {
  // Complementary slackness for the convex objective: every positive entry
  // has zero partial derivative, every zero entry a nonnegative one.
  std::mt19937_64 rng(26);
  for (int k = 0; k < 10; ++k) {
    auto a = random_cloud(rng, 3, 2.0);
    auto b = random_cloud(rng, 4, 2.0);
    Mat C = wfr_cost_matrix(a, b, 0.6);
    auto r = brute_force_oet(a, b, 0.6);
    Vec rows = r.plan.rowwise().sum();
    Vec cols = r.plan.colwise().sum().transpose();
    for (Eigen::Index i = 0; i < 3; ++i) {
      for (Eigen::Index j = 0; j < 4; ++j) {
        if (!std::isfinite(C(i, j))) continue;
        const double grad = C(i, j) + std::log(rows[i] / a.masses[i]) + std::log(cols[j] / b.masses[j]);
        if (r.plan(i, j) > 1e-10) EXPECT_NEAR(grad, 0.0, 1e-7);
        else EXPECT_GT(grad, -1e-7);
      }
    }
  }
}

TEST(SemiCoupling, Examples) {
  auto mu0 = cloud({{0, 0}, {1, 1}}, {1, 1});
  auto sc = semi_coupling(plan_from(Mat::Identity(2, 2) * 0.7), mu0);
  EXPECT_TRUE(sc.entries.isApprox(Mat::Identity(2, 2)));

  Mat p(2, 2);
  p << 0.2, 0.2, 0.0, 0.5;
  sc = semi_coupling(plan_from(p), mu0);
  Mat expected(2, 2);
  expected << 0.5, 0.5, 0.0, 1.0;
  EXPECT_LT((sc.entries - expected).cwiseAbs().maxCoeff(), 1e-15);

  Mat z(2, 2);
  z << 0.3, 0.1, 0.0, 0.0;
  sc = semi_coupling(plan_from(z), mu0);
  EXPECT_TRUE(sc.pure_death[1]);
  EXPECT_FALSE(sc.pure_death[0]);
  EXPECT_EQ(sc.entries.row(1).norm(), 0.0);
  EXPECT_EQ(sc.death_mass[1], 1.0);
}

TEST(SemiCoupling, RowSumsReproduceSourceMasses) {
  std::mt19937_64 rng(27);
  auto a = random_cloud(rng, 30, 2.0);
  auto b = random_cloud(rng, 40, 2.0);
  auto plan = solve_oet(a, b, 1.0, 0.0);
  auto sc = semi_coupling(plan, a);
  for (Eigen::Index i = 0; i < 30; ++i) {
    if (!sc.pure_death[static_cast<std::size_t>(i)]) {
      EXPECT_NEAR(sc.entries.row(i).sum(), a.masses[i], 1e-8 * a.masses[i]);
    }
  }
}

TEST(PairMasses, IdentityCoupling) {
  auto mu0 = cloud({{0, 0}, {1, 1}}, {1, 1});
  auto plan = plan_from(Mat::Identity(2, 2));
  auto sc = semi_coupling(plan, mu0);
  Mat m1 = pair_masses(plan, sc, mu0);
  EXPECT_EQ(m1(0, 0), 1.0);
  EXPECT_EQ(m1(1, 1), 1.0);
  auto doubled = cloud({{0, 0}, {1, 1}}, {2, 2});
  m1 = pair_masses(plan, sc, doubled);
  EXPECT_EQ(m1(0, 0), 2.0);
  EXPECT_EQ(m1(1, 1), 2.0);
  EXPECT_THROW(pair_mass(plan, sc, mu0, 0, 1), DomainError);
}

TEST(PairMasses, AsymmetricInstanceMatchesHandFormula) {
  auto mu0 = cloud({{0, 0}, {1, 0}}, {1.0, 3.0});
  auto mu1 = cloud({{0, 1}, {1, 1}}, {2.0, 0.5});
  Mat p(2, 2);
  p << 0.4, 0.1, 0.6, 0.3;
  auto plan = plan_from(p);
  auto sc = semi_coupling(plan, mu0);
  // gamma0(i,j) = p_ij / rowsum_i * mu0_i ; gamma1(i,j) = p_ij / colsum_j * mu1_j
  const double g0_00 = 0.4 / 0.5 * 1.0, g1_00 = 0.4 / 1.0 * 2.0;
  const double g0_01 = 0.1 / 0.5 * 1.0, g1_01 = 0.1 / 0.4 * 0.5;
  const double g0_10 = 0.6 / 0.9 * 3.0, g1_10 = 0.6 / 1.0 * 2.0;
  const double g0_11 = 0.3 / 0.9 * 3.0, g1_11 = 0.3 / 0.4 * 0.5;
  Mat m1 = pair_masses(plan, sc, mu1);
  EXPECT_NEAR(m1(0, 0), g1_00 / g0_00, 1e-14);
  EXPECT_NEAR(m1(0, 1), g1_01 / g0_01, 1e-14);
  EXPECT_NEAR(m1(1, 0), g1_10 / g0_10, 1e-14);
  EXPECT_NEAR(m1(1, 1), g1_11 / g0_11, 1e-14);
}

TEST(Minibatch, FullBatchEqualsFullSolve) {
  std::mt19937_64 rng(28);
  auto a = random_cloud(rng, 12, 2.0);
  auto b = random_cloud(rng, 12, 2.0);
  auto mb = minibatch_semi_coupling(a, b, 12, 1.0, 0.05, 3);
  auto full = solve_oet(a, b, 1.0, 0.05);
  EXPECT_EQ(mb.plan.entries, full.entries);
}

TEST(Minibatch, SeedDeterminismAndIndexMaps) {
  std::mt19937_64 rng(29);
  auto a = random_cloud(rng, 50, 2.0);
  auto b = random_cloud(rng, 60, 2.0);
  auto m1 = minibatch_semi_coupling(a, b, 16, 1.0, 0.05, 99);
  auto m2 = minibatch_semi_coupling(a, b, 16, 1.0, 0.05, 99);
  EXPECT_EQ(m1.plan.source_index, m2.plan.source_index);
  EXPECT_EQ(m1.plan.target_index, m2.plan.target_index);
  EXPECT_EQ(m1.plan.entries, m2.plan.entries);
  ASSERT_EQ(m1.plan.source_index.size(), 16u);
  ASSERT_EQ(m1.plan.target_index.size(), 16u);
  for (std::size_t k = 0; k < 16; ++k) {
    EXPECT_EQ(m1.source.points.col(static_cast<Eigen::Index>(k)),
              a.points.col(static_cast<Eigen::Index>(m1.plan.source_index[k])));
  }
  EXPECT_NEAR(m1.source.total_mass(), a.total_mass(), 1e-12);
  EXPECT_NEAR(m1.target.total_mass(), b.total_mass(), 1e-12);
  auto m3 = minibatch_semi_coupling(a, b, 16, 1.0, 0.05, 100);
  EXPECT_NE(m1.plan.source_index, m3.plan.source_index);
}

TEST(Minibatch, OversizedBatchClamps) {
  std::mt19937_64 rng(30);
  auto a = random_cloud(rng, 5, 2.0);
  auto b = random_cloud(rng, 7, 2.0);
  auto mb = minibatch_semi_coupling(a, b, 100, 1.0, 0.05, 1);
  EXPECT_EQ(mb.plan.entries.rows(), 5);
  EXPECT_EQ(mb.plan.entries.cols(), 7);
}

TEST(Minibatch, SamplingFavoursHeavyPoints) {
  Vec w = Vec::Constant(10, 1e-6);
  w[3] = 10.0;
  std::mt19937_64 rng(31);
  int hits = 0;
  for (int k = 0; k < 200; ++k) {
    auto idx = sample_without_replacement(w, 1, rng);
    hits += idx[0] == 3;
  }
  EXPECT_GT(hits, 195);
}

TEST(PlanFile, RoundTrip) {
  std::mt19937_64 rng(32);
  auto a = random_cloud(rng, 5, 2.0);
  auto b = random_cloud(rng, 6, 2.0);
  auto plan = solve_oet(a, b, 1.0, 0.05);
  const auto path = (std::filesystem::temp_directory_path() / "wfrmfm_plan_test.bin").string();
  save_plan(plan, path);
  EXPECT_EQ(std::filesystem::file_size(path), 4u + 4 + 4 + 8 + 5 * 6 * 8);
  auto back = load_plan(path);
  EXPECT_EQ(back.entries, plan.entries);
  EXPECT_EQ(back.epsilon, plan.epsilon);
  {
    std::FILE* f = std::fopen(path.c_str(), "r+b");
    std::fputc('X', f);
    std::fclose(f);
  }
  EXPECT_THROW(load_plan(path), DataError);
  std::filesystem::remove(path);
}
