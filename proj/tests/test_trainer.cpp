#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <sstream>

#include "wfrmfm/oet_oracle.hpp"
#include "wfrmfm/trainer.hpp"

using namespace wfrmfm;

namespace {

std::string bytes(const MeanFieldParams& p) {
  std::ostringstream os;
  write_params(os, p);
  return os.str();
}

WeightedCloud gaussian_cloud(int n, Vec mean, double sd, double mass_each, double time, std::uint64_t seed,
                             std::optional<int> cond = std::nullopt) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, sd);
  Mat pts(mean.size(), n);
  for (int j = 0; j < n; ++j) {
    for (Eigen::Index k = 0; k < mean.size(); ++k) pts(k, j) = mean[k] + nd(rng);
  }
  auto c = uniform_cloud(pts, mass_each, time);
  c.condition_id = cond;
  return c;
}

Vec v2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.depth = 3;
  cfg.width = 32;
  cfg.batch_size = 16;
  cfg.steps = 20;
  cfg.seed = 5;
  return cfg;
}

SnapshotDataset two_snapshots(int n = 30) {
  return make_dataset({gaussian_cloud(n, v2(0, 0), 0.1, 1.0, 0.0, 1), gaussian_cloud(n, v2(0.3, 0), 0.1, 1.2, 1.0, 2)});
}

}  // namespace

TEST(Adam, ZeroGradsLeaveParamsUnchanged) {
  auto p = init_params(2, 0, 3, 16, 1);
  const auto before = bytes(p);
  auto st = adam_init(p);
  const auto g = zeros_like(p);
  for (int k = 0; k < 5; ++k) adam_update(st, p, g, AdamConfig{});
  EXPECT_EQ(bytes(p), before);
}

TEST(Adam, FirstStepIsLearningRate) {
  // One scalar parameter: the bias-corrected moments at step 1 are g and g^2.
  auto p = init_params(1, 0, 1, 1, 1);
  p.v.layers[0].W.setZero();
  p.v.layers[0].b.setZero();
  auto st = adam_init(p);
  auto g = zeros_like(p);
  g.v.layers[0].b[0] = 1.0;
  AdamConfig cfg;
  cfg.lr = 0.1;
  adam_update(st, p, g, cfg);
  EXPECT_NEAR(p.v.layers[0].b[0], -0.1 / (1.0 + 1e-8), 1e-15);
  EXPECT_EQ(p.v.layers[0].W.norm(), 0.0);
}

TEST(Adam, ConvergesOnQuadratic) {
  auto p = init_params(1, 0, 1, 1, 1);
  p.v.layers[0].b[0] = 1.0;
  auto st = adam_init(p);
  AdamConfig cfg;
  cfg.lr = 0.05;
  for (int k = 0; k < 2000; ++k) {
    auto g = zeros_like(p);
    g.v.layers[0].b[0] = p.v.layers[0].b[0];  // d/dw (w^2 / 2)
    adam_update(st, p, g, cfg);
  }
  EXPECT_LT(std::abs(p.v.layers[0].b[0]), 1e-3);
}

TEST(Couplings, OnePerSegment) {
  auto cfg = small_config();
  EXPECT_EQ(precompute_couplings(two_snapshots(), cfg).size(), 1u);
  std::vector<WeightedCloud> cs;
  for (int k = 0; k < 5; ++k) cs.push_back(gaussian_cloud(20, v2(0.1 * k, 0), 0.1, 1.0, 8.0 * k, 10 + k));
  const auto ds = make_dataset(cs);
  const auto tasks = precompute_couplings(ds, cfg);
  ASSERT_EQ(tasks.size(), 4u);
  EXPECT_DOUBLE_EQ(tasks[1]->segment.lo, 0.25);
  EXPECT_DOUBLE_EQ(tasks[1]->segment.hi, 0.5);
}

TEST(Couplings, SingleSnapshotRejected) {
  const auto ds = make_dataset({gaussian_cloud(5, v2(0, 0), 0.1, 1.0, 0.0, 1)});
  EXPECT_THROW(precompute_couplings(ds, small_config()), DataError);
}

TEST(Couplings, IdenticalSnapshotsCoupleToThemselves) {
  auto a = gaussian_cloud(4, v2(0, 0), 3.0, 1.0, 0.0, 3);
  auto b = a;
  b.time = 1.0;
  auto cfg = small_config();
  cfg.delta = 5.0;
  cfg.epsilon = 1e-3;
  cfg.oet_tol = 1e-10;
  const auto tasks = precompute_couplings(make_dataset({a, b}), cfg);
  const auto& mb = *tasks[0]->pool[0];
  const auto oracle = brute_force_oet(mb.source, mb.target, cfg.delta);
  const Mat sc_oracle = semi_coupling(TransportPlan{oracle.plan}, mb.source).entries;
  const Mat& g = mb.coupling.entries;
  for (Eigen::Index i = 0; i < g.rows(); ++i) {
    Eigen::Index j;
    g.row(i).maxCoeff(&j);
    EXPECT_EQ(j, i);
    for (Eigen::Index k = 0; k < g.cols(); ++k) EXPECT_NEAR(g(i, k), sc_oracle(i, k), 1e-2 * g.maxCoeff());
  }
}

TEST(Train, ZeroStepsReturnsInitialParams) {
  auto cfg = small_config();
  cfg.steps = 0;
  const auto r = train(two_snapshots(), cfg);
  EXPECT_EQ(bytes(r.params), bytes(init_params(2, 0, cfg.depth, cfg.width, cfg.seed)));
  EXPECT_TRUE(r.log.empty());
}

TEST(Train, DeterministicUnderSeed) {
  auto cfg = small_config();
  const auto a = train(two_snapshots(), cfg);
  const auto b = train(two_snapshots(), cfg);
  EXPECT_EQ(bytes(a.params), bytes(b.params));
  ASSERT_EQ(a.log.size(), 20u);
  for (std::size_t k = 0; k < a.log.size(); ++k) {
    EXPECT_EQ(a.log[k].step, static_cast<std::int64_t>(k + 1));
    EXPECT_EQ(a.log[k].loss_total, b.log[k].loss_total);
  }
  cfg.seed = 6;
  EXPECT_NE(bytes(train(two_snapshots(), cfg).params), bytes(a.params));
}

TEST(Train, MinibatchCouplingIsDeterministic) {
  auto cfg = small_config();
  cfg.oet_batch = 10;
  cfg.oet_pool = 3;
  const auto a = train(two_snapshots(), cfg);
  const auto b = train(two_snapshots(), cfg);
  EXPECT_EQ(bytes(a.params), bytes(b.params));
}

TEST(Train, ZeroLambdaFreezesGrowthHead) {
  auto cfg = small_config();
  cfg.lambda = 0.0;
  const auto init = init_params(2, 0, cfg.depth, cfg.width, cfg.seed);
  const auto r = train(two_snapshots(), cfg);
  for (std::size_t l = 0; l < init.h.layers.size(); ++l) {
    EXPECT_EQ(r.params.h.layers[l].W, init.h.layers[l].W);
    EXPECT_EQ(r.params.h.layers[l].b, init.h.layers[l].b);
  }
  EXPECT_NE(r.params.v.layers[0].W, init.v.layers[0].W);
}

TEST(Train, LogCsvColumns) {
  auto cfg = small_config();
  cfg.steps = 3;
  const auto r = train(two_snapshots(), cfg);
  std::ostringstream os;
  write_train_log(r.log, os);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "step,loss_total,loss_v,loss_h,wall_ms");
  int rows = 0;
  while (std::getline(is, line)) ++rows;
  EXPECT_EQ(rows, 3);
  for (const auto& row : r.log) EXPECT_NEAR(row.loss_total, row.loss_v + cfg.lambda * row.loss_h, 1e-12);
}

TEST(Train, ResumeMatchesUninterruptedRun) {
  auto cfg = small_config();
  const auto ds = two_snapshots();
  const auto full = train(ds, cfg);

  const auto path = (std::filesystem::temp_directory_path() / "wfrmfm_resume_test.state").string();
  {
    auto tasks = precompute_couplings(ds, cfg);
    auto st = init_train_state(2, cfg);
    run_training(st, tasks, cfg, 8);
    save_train_state(st, path);
  }
  auto tasks = precompute_couplings(ds, cfg);
  auto st = load_train_state(path);
  EXPECT_EQ(st.step, 8);
  run_training(st, tasks, cfg, cfg.steps);
  std::filesystem::remove(path);
  EXPECT_EQ(bytes(st.params), bytes(full.params));
}

TEST(Train, CosineScheduleEndpoints) {
  TrainConfig cfg;
  cfg.adam.lr = 2e-3;
  cfg.steps = 100;
  EXPECT_EQ(cfg.lr_at(0), 2e-3);
  EXPECT_EQ(cfg.lr_at(77), 2e-3);
  cfg.lr_schedule = LrSchedule::Cosine;
  EXPECT_EQ(cfg.lr_at(0), 2e-3);
  EXPECT_NEAR(cfg.lr_at(50), 1e-3, 1e-15);
  EXPECT_NEAR(cfg.lr_at(25), 1e-3 * (1.0 + std::sqrt(0.5)), 1e-15);
  EXPECT_NEAR(cfg.lr_at(100), 0.0, 1e-18);
  for (int k = 1; k <= 100; ++k) EXPECT_LE(cfg.lr_at(k), cfg.lr_at(k - 1));
}

TEST(Train, CosineResumeMatchesUninterruptedRun) {
  auto cfg = small_config();
  cfg.lr_schedule = LrSchedule::Cosine;
  const auto ds = two_snapshots();
  const auto full = train(ds, cfg);
  auto tasks = precompute_couplings(ds, cfg);
  auto st = init_train_state(2, cfg);
  run_training(st, tasks, cfg, 5);
  auto copy = st;
  run_training(copy, tasks, cfg, cfg.steps);
  EXPECT_EQ(bytes(copy.params), bytes(full.params));
  auto plain = small_config();
  EXPECT_NE(bytes(train(ds, plain).params), bytes(full.params));
}

TEST(Train, CheckpointHookFires) {
  auto cfg = small_config();
  cfg.checkpoint_every = 5;
  std::vector<std::int64_t> seen;
  TrainHooks hooks;
  hooks.checkpoint = [&](const TrainState& st) { seen.push_back(st.step); };
  train(two_snapshots(), cfg, hooks);
  EXPECT_EQ(seen, (std::vector<std::int64_t>{5, 10, 15, 20}));
}

TEST(Train, NonFiniteLossAbortsWithLastGoodParams) {
  auto cfg = small_config();
  cfg.adam.lr = 1e300;
  try {
    train(two_snapshots(), cfg);
    FAIL() << "expected abort";
  } catch (const TrainingAborted& e) {
    EXPECT_GT(e.failed_step, 0);
    EXPECT_EQ(e.last_good_params.d, 2);
  }
}

TEST(Train, RejectsInvalidConfig) {
  auto cfg = small_config();
  cfg.p_diff = 1.5;
  EXPECT_THROW(train(two_snapshots(), cfg), DomainError);
}

TEST(Conditional, SingleConditionReducesToTrain) {
  auto ctrl = gaussian_cloud(30, v2(0, 0), 0.1, 1.0, 0.0, 1);
  auto pert = gaussian_cloud(30, v2(0.3, 0), 0.1, 1.2, 1.0, 2);
  auto cfg = small_config();
  const auto plain = train(make_dataset({ctrl, pert}), cfg);
  pert.condition_id = 0;
  const auto cond = train_conditional(make_dataset({ctrl, pert}), {0}, cfg, Mat());
  EXPECT_EQ(bytes(cond.params), bytes(plain.params));
}

TEST(Conditional, MassRatioDelta) {
  auto ctrl = gaussian_cloud(10, v2(0, 0), 0.1, 1.0, 0.0, 1);
  auto a = gaussian_cloud(20, v2(0.3, 0), 0.1, 1.0, 1.0, 2, 0);
  auto b = gaussian_cloud(5, v2(0.3, 0), 0.1, 1.0, 1.0, 3, 1);
  auto cfg = small_config();
  cfg.delta_mass_ratio = true;
  const auto tasks = precompute_condition_couplings(make_dataset({ctrl, a, b}), {0, 1}, cfg);
  EXPECT_DOUBLE_EQ(tasks[0]->delta, 2.0);
  EXPECT_DOUBLE_EQ(tasks[1]->delta, 0.5);
}

TEST(Conditional, UnknownConditionRejected) {
  auto ctrl = gaussian_cloud(10, v2(0, 0), 0.1, 1.0, 0.0, 1);
  auto a = gaussian_cloud(10, v2(0.3, 0), 0.1, 1.0, 1.0, 2, 0);
  const auto ds = make_dataset({ctrl, a});
  EXPECT_THROW(precompute_condition_couplings(ds, {3}, small_config()), DataError);
  EXPECT_THROW(train_conditional(ds, {3}, small_config(), Mat::Zero(2, 2)), DataError);
}

TEST(Conditional, ConditionMinibatchTrains) {
  auto ctrl = gaussian_cloud(10, v2(0, 0), 0.1, 1.0, 0.0, 1);
  std::vector<WeightedCloud> cs{ctrl};
  for (int c = 0; c < 4; ++c) cs.push_back(gaussian_cloud(10, v2(0.1 * c, 0), 0.1, 1.0, 1.0, 10 + c, c));
  auto cfg = small_config();
  cfg.condition_batch = 2;
  Mat emb(4, 2);
  emb << 0, 0, 1, 0, 0, 1, 1, 1;
  const auto r = train_conditional(make_dataset(cs), {0, 1, 2, 3}, cfg, emb);
  EXPECT_EQ(r.params.e, 2);
  EXPECT_EQ(r.log.size(), 20u);
  EXPECT_EQ(bytes(r.params), bytes(train_conditional(make_dataset(cs), {0, 1, 2, 3}, cfg, emb).params));
}

// A Gaussian translated by a constant and uniformly rescaled in mass: the
// learned mean fields over [0, 1] must recover the displacement and the
// log mass ratio.
TEST(Train, RecoversConstantTranslationAndGrowth) {
  const int n = 150;
  auto a = gaussian_cloud(n, v2(0, 0), 0.15, 1.0, 0.0, 21);
  auto b = a;
  b.time = 1.0;
  b.points.row(0).array() += 0.5;
  b.masses *= 1.5;
  TrainConfig cfg;
  cfg.depth = 3;
  cfg.width = 64;
  cfg.batch_size = 128;
  cfg.steps = 2500;
  cfg.lambda = 1.0;
  // Large enough delta that transport is cheap next to mass creation, so the
  // entropic plan carries nearly the same growth on every row.
  cfg.delta = 3.0;
  cfg.epsilon = 1e-3;
  cfg.seed = 3;
  const auto r = train(make_dataset({a, b}), cfg);
  EXPECT_EQ(r.stats.dropped_out_of_cone, 0);
  double ev = 0.0, eh = 0.0;
  for (Eigen::Index j = 0; j < 40; ++j) {
    const auto [v, h] = forward(r.params, a.points.col(j), 0.0, 1.0);
    ev = std::max(ev, (v - v2(0.5, 0.0)).norm() / 0.5);
    eh = std::max(eh, std::abs(std::exp(h) - 1.5) / 1.5);
  }
  EXPECT_LT(ev, 5e-2);
  EXPECT_LT(eh, 5e-2);
}
