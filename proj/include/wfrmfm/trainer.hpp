#pragma once

// Mean flow matching training over snapshot segments (or over perturbation
// conditions): couplings are solved once up front, then every step draws
// tuples, builds detached targets with one JVP and takes an Adam step.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <memory>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "wfrmfm/meanfield_net.hpp"
#include "wfrmfm/oet.hpp"
#include "wfrmfm/optim.hpp"
#include "wfrmfm/path_sampler.hpp"
#include "wfrmfm/snapshot_io.hpp"

namespace wfrmfm {

enum class SegmentMode { All, Duration };
enum class WeightMode { GeodesicMass, Literal };
enum class LrSchedule { Constant, Cosine };

struct TrainConfig {
  double delta = 1.5;
  bool delta_mass_ratio = false;  // per-condition delta_c = N_c / N_ctrl
  double epsilon = 0.0;           // <= 0: 0.05 x median finite cost
  double sigma = -1.0;            // < 0: 0.05 x median nearest-neighbour distance
  double p_diff = 0.6;
  double lambda = 0.05;
  int batch_size = 64;  // tuples per segment (or condition) per step
  int oet_batch = 0;    // 0: full OET
  int oet_pool = 16;    // mini-batch couplings cycled per segment
  int oet_max_iter = 100000;
  double oet_tol = 1e-6;
  AdamConfig adam;
  int steps = 20000;
  std::uint64_t seed = 0;
  int depth = 5;
  int width = 256;
  int condition_batch = 0;  // conditions per step; 0 or >= count: all
  int checkpoint_every = 0;
  SegmentMode segment_mode = SegmentMode::All;
  WeightMode weight_mode = WeightMode::GeodesicMass;
  LrSchedule lr_schedule = LrSchedule::Constant;  // cosine: lr -> 0 over `steps`

  /// Learning rate for the update that takes the state from `step` to step + 1.
  double lr_at(std::int64_t step) const {
    if (lr_schedule == LrSchedule::Constant || steps <= 0) return adam.lr;
    const double f = std::min(1.0, static_cast<double>(step) / static_cast<double>(steps));
    return adam.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * f));
  }

  void validate() const {
    if (!(delta > 0.0) && !delta_mass_ratio) throw DomainError("delta must be positive");
    if (p_diff < 0.0 || p_diff > 1.0) throw DomainError("p_diff must lie in [0, 1]");
    if (lambda < 0.0) throw DomainError("lambda must be nonnegative");
    if (batch_size < 1) throw DomainError("batch_size must be >= 1");
    if (oet_batch < 0 || oet_pool < 1) throw DomainError("invalid OET batch settings");
    if (steps < 0) throw DomainError("steps must be >= 0");
    if (!(adam.lr > 0.0) || !(adam.eps > 0.0)) throw DomainError("invalid optimizer settings");
  }
};

struct TrainLogRow {
  std::int64_t step = 0;
  double loss_total = 0.0;
  double loss_v = 0.0;
  double loss_h = 0.0;
  double wall_ms = 0.0;
};

inline void write_train_log(const std::vector<TrainLogRow>& log, std::ostream& os, bool header = true) {
  if (header) os << "step,loss_total,loss_v,loss_h,wall_ms\n";
  char buf[160];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof buf, "%lld,%.10g,%.10g,%.10g,%.3f\n", static_cast<long long>(r.step), r.loss_total,
                  r.loss_v, r.loss_h, r.wall_ms);
    os << buf;
  }
}

/// Coupling for one training task (a snapshot segment or a condition). For
/// mini-batch OET the pool holds several independently sampled couplings.
struct TaskCoupling {
  Segment segment;
  std::optional<int> condition;
  double delta = 1.0;
  double sigma = 0.0;
  WeightedCloud source;  // masses divided by the source total
  WeightedCloud target;  // masses divided by the source total
  std::vector<std::unique_ptr<MinibatchCoupling>> pool;
  std::vector<std::unique_ptr<PairSampler>> samplers;
};

namespace detail {

inline WeightedCloud scaled(const WeightedCloud& c, double s) {
  WeightedCloud out = c;
  out.masses *= s;
  return out;
}

inline std::unique_ptr<TaskCoupling> build_task(const WeightedCloud& src, const WeightedCloud& tgt, Segment seg,
                                                std::optional<int> cond, double delta, const TrainConfig& cfg,
                                                std::uint64_t seed) {
  if (src.size() == 0 || tgt.size() == 0) throw DataError("empty snapshot in training data");
  src.validate();
  tgt.validate();
  auto task = std::make_unique<TaskCoupling>();
  task->segment = seg;
  task->condition = cond;
  task->delta = delta;
  const double norm = 1.0 / src.total_mass();
  task->source = scaled(src, norm);
  task->target = scaled(tgt, norm);
  task->sigma = cfg.sigma >= 0.0 ? cfg.sigma : default_sigma(task->source);

  const bool full = cfg.oet_batch == 0 ||
                    (static_cast<std::size_t>(cfg.oet_batch) >= src.size() &&
                     static_cast<std::size_t>(cfg.oet_batch) >= tgt.size());
  const int pool = full ? 1 : cfg.oet_pool;
  for (int k = 0; k < pool; ++k) {
    auto mb = std::make_unique<MinibatchCoupling>(minibatch_semi_coupling(
        task->source, task->target, full ? std::max(src.size(), tgt.size()) : static_cast<std::size_t>(cfg.oet_batch),
        delta, cfg.epsilon, seed + static_cast<std::uint64_t>(k), cfg.oet_max_iter, cfg.oet_tol));
    task->samplers.push_back(std::make_unique<PairSampler>(mb->plan, mb->coupling, mb->source, mb->target));
    task->pool.push_back(std::move(mb));
  }
  return task;
}

}  // namespace detail

/// One coupling per consecutive snapshot pair of an unconditioned dataset.
inline std::vector<std::unique_ptr<TaskCoupling>> precompute_couplings(const SnapshotDataset& ds,
                                                                       const TrainConfig& cfg) {
  cfg.validate();
  if (ds.time_grid.size() < 2) throw DataError("training needs at least two snapshots");
  const auto grid = ds.normalized_grid();
  std::vector<std::unique_ptr<TaskCoupling>> tasks;
  for (std::size_t k = 0; k + 1 < ds.time_grid.size(); ++k) {
    tasks.push_back(detail::build_task(ds.at(k), ds.at(k + 1), Segment{grid[k], grid[k + 1]}, std::nullopt,
                                       cfg.delta, cfg, cfg.seed * 1000003ULL + k * 7919ULL));
  }
  return tasks;
}

/// One coupling per training condition, control (first time) to perturbed
/// (last time). delta_c = N_c / N_ctrl under the mass-ratio rule.
inline std::vector<std::unique_ptr<TaskCoupling>> precompute_condition_couplings(
    const SnapshotDataset& ds, const std::vector<int>& conditions, const TrainConfig& cfg) {
  cfg.validate();
  if (ds.time_grid.size() != 2) throw DataError("perturbation data needs exactly a control and a perturbed time");
  const WeightedCloud& control = ds.at(0);
  std::vector<std::unique_ptr<TaskCoupling>> tasks;
  for (int c : conditions) {
    const WeightedCloud* pert = ds.find(ds.time_grid[1], c);
    if (!pert) throw DataError("condition " + std::to_string(c) + " has no perturbed snapshot");
    double delta = cfg.delta;
    if (cfg.delta_mass_ratio) {
      delta = pert->total_mass() / control.total_mass();
      if (!(delta > 0.0)) throw DomainError("condition " + std::to_string(c) + " has zero perturbed mass");
    }
    tasks.push_back(detail::build_task(control, *pert, Segment{0.0, 1.0}, c, delta, cfg,
                                       cfg.seed * 1000003ULL + static_cast<std::uint64_t>(c) * 7919ULL));
  }
  return tasks;
}

struct TrainState {
  MeanFieldParams params;
  AdamState adam;
  std::mt19937_64 rng;
  std::int64_t step = 0;
};

inline TrainState init_train_state(int d, const TrainConfig& cfg, const Mat& embedding = Mat()) {
  TrainState st;
  st.params = init_params(d, static_cast<int>(embedding.cols()), cfg.depth, cfg.width, cfg.seed, embedding);
  st.adam = adam_init(st.params);
  st.rng.seed(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
  return st;
}

inline void save_train_state(const TrainState& st, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write training state: " + path);
  write_params(os, st.params);
  write_params(os, st.adam.m);
  write_params(os, st.adam.v);
  detail::put_le<std::uint64_t>(os, st.adam.step);
  detail::put_le<std::uint64_t>(os, static_cast<std::uint64_t>(st.step));
  std::ostringstream rs;
  rs << st.rng;
  const std::string r = rs.str();
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(r.size()));
  os.write(r.data(), static_cast<std::streamsize>(r.size()));
  if (!os) throw DataError("failed writing training state: " + path);
}

inline TrainState load_train_state(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open training state: " + path);
  TrainState st;
  st.params = read_params(is);
  st.adam.m = read_params(is);
  st.adam.v = read_params(is);
  st.adam.step = detail::get_le<std::uint64_t>(is);
  st.step = static_cast<std::int64_t>(detail::get_le<std::uint64_t>(is));
  const auto n = detail::get_le<std::uint32_t>(is);
  std::string r(n, '\0');
  is.read(r.data(), n);
  if (!is) throw DataError("truncated training state: " + path);
  std::istringstream rs(r);
  rs >> st.rng;
  return st;
}

/// Thrown when a step produces a non-finite loss; carries the parameters
/// from before that step.
class TrainingAborted : public NumericError {
 public:
  TrainingAborted(const std::string& msg, MeanFieldParams last_good, std::int64_t step)
      : NumericError(msg), last_good_params(std::move(last_good)), failed_step(step) {}
  MeanFieldParams last_good_params;
  std::int64_t failed_step;
};

struct TrainStats {
  std::int64_t dropped_out_of_cone = 0;
  std::int64_t dropped_collapse = 0;
};

struct TrainHooks {
  std::function<void(const TrainState&)> checkpoint;  // every cfg.checkpoint_every steps
  std::function<void(const TrainLogRow&)> on_step;
};

struct TupleBatch {
  Mat x;
  Vec t, T, g, weight;
  Mat u;
  std::vector<int> cond;
};

namespace detail {

inline void draw_tuples(TaskCoupling& task, std::size_t pool_index, int count, const TrainConfig& cfg,
                        std::mt19937_64& rng, TrainStats& stats, std::vector<RawTuple>& out,
                        std::vector<double>& weights, std::vector<int>& conds) {
  PairSampler& sampler = *task.samplers[pool_index % task.samplers.size()];
  int made = 0, attempts = 0;
  while (made < count) {
    if (++attempts > 1000 * count + 1000) throw NumericError("could not draw valid training tuples");
    const std::size_t k = sampler.draw(rng);
    const GeodesicConstants* gc = nullptr;
    try {
      gc = &sampler.constants(k, task.delta);
    } catch (const OutOfConeError&) {
      ++stats.dropped_out_of_cone;
      continue;
    }
    const TimePair tp = sample_time_pair(cfg.p_diff, task.segment.lo, task.segment.hi, rng);
    RawTuple r;
    try {
      r = sample_tuple_at(*gc, task.segment, task.sigma, tp, rng);
    } catch (const NumericError&) {
      ++stats.dropped_collapse;
      continue;
    }
    const double p = sampler.pair(k).probability;
    double w = tuple_weight(*gc, r.s, p);
    // gamma_0 is normalised to unit total, so p is the entry itself.
    if (cfg.weight_mode == WeightMode::Literal) w /= p;
    out.push_back(std::move(r));
    weights.push_back(w);
    conds.push_back(task.condition.value_or(-1));
    ++made;
  }
}

}  // namespace detail

/// Runs optimizer steps until st.step == target_steps.
inline std::vector<TrainLogRow> run_training(TrainState& st, std::vector<std::unique_ptr<TaskCoupling>>& tasks,
                                             const TrainConfig& cfg, std::int64_t target_steps,
                                             const TrainHooks& hooks = {}, TrainStats* stats_out = nullptr) {
  if (tasks.empty()) throw DataError("no training tasks");
  std::vector<TrainLogRow> log;
  TrainStats stats;
  const bool conditional = st.params.e > 0;
  const auto t0 = std::chrono::steady_clock::now();

  std::vector<double> durations;
  for (const auto& t : tasks) durations.push_back(t->segment.length());

  std::vector<RawTuple> raw;
  std::vector<double> weights;
  std::vector<int> conds;
  while (st.step < target_steps) {
    raw.clear();
    weights.clear();
    conds.clear();
    const std::size_t pool_index = static_cast<std::size_t>(st.step);

    // Which tasks contribute this step.
    std::vector<std::size_t> chosen(tasks.size());
    std::iota(chosen.begin(), chosen.end(), std::size_t{0});
    if (cfg.condition_batch > 0 && static_cast<std::size_t>(cfg.condition_batch) < tasks.size()) {
      std::vector<std::size_t> pick;
      std::sample(chosen.begin(), chosen.end(), std::back_inserter(pick),
                  static_cast<std::size_t>(cfg.condition_batch), st.rng);
      chosen = std::move(pick);
    }

    if (cfg.segment_mode == SegmentMode::All) {
      for (std::size_t k : chosen) {
        detail::draw_tuples(*tasks[k], pool_index, cfg.batch_size, cfg, st.rng, stats, raw, weights, conds);
      }
    } else {
      std::vector<double> w;
      for (std::size_t k : chosen) w.push_back(durations[k]);
      std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
      const int total = cfg.batch_size * static_cast<int>(chosen.size());
      for (int n = 0; n < total; ++n) {
        detail::draw_tuples(*tasks[chosen[pick(st.rng)]], pool_index, 1, cfg, st.rng, stats, raw, weights, conds);
      }
    }

    const auto B = static_cast<Eigen::Index>(raw.size());
    const int d = st.params.d;
    Mat x(d, B), u(d, B);
    Vec t(B), T(B), g(B);
    for (Eigen::Index j = 0; j < B; ++j) {
      const RawTuple& r = raw[static_cast<std::size_t>(j)];
      x.col(j) = r.x;
      u.col(j) = r.u;
      t[j] = r.t;
      T[j] = r.T;
      g[j] = r.g;
    }
    LossBatch batch;
    batch.X = pack_inputs(st.params, x, t, T, conditional ? conds : std::vector<int>{});
    const Targets tg = assemble_targets(st.params, batch.X, u, g);
    batch.v_target = tg.v;
    batch.h_target = tg.h;
    batch.weight = Eigen::Map<const Vec>(weights.data(), B);

    LossResult lr;
    bool finite = tg.v.allFinite() && tg.h.allFinite();
    if (finite) {
      lr = loss_and_grads(st.params, batch, cfg.lambda);
      finite = std::isfinite(lr.loss);
    }
    if (!finite) {
      throw TrainingAborted("non-finite loss at step " + std::to_string(st.step), st.params, st.step);
    }
    AdamConfig opt = cfg.adam;
    opt.lr = cfg.lr_at(st.step);
    adam_update(st.adam, st.params, lr.grads, opt);
    ++st.step;

    TrainLogRow row;
    row.step = st.step;
    row.loss_total = lr.loss;
    row.loss_v = lr.loss_v;
    row.loss_h = lr.loss_h;
    row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    log.push_back(row);
    if (hooks.on_step) hooks.on_step(row);
    if (hooks.checkpoint && cfg.checkpoint_every > 0 && st.step % cfg.checkpoint_every == 0) hooks.checkpoint(st);
  }
  if (stats_out) *stats_out = stats;
  return log;
}

struct TrainResult {
  MeanFieldParams params;
  std::vector<TrainLogRow> log;
  TrainStats stats;
};

inline TrainResult train(const SnapshotDataset& ds, const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  auto tasks = precompute_couplings(ds, cfg);
  TrainState st = init_train_state(ds.dim, cfg);
  TrainResult r;
  r.log = run_training(st, tasks, cfg, cfg.steps, hooks, &r.stats);
  r.params = std::move(st.params);
  return r;
}

/// Conditional training. `embedding` has one row per condition id known to
/// the model (train and held-out); `train_conditions` selects the ids used.
inline TrainResult train_conditional(const SnapshotDataset& ds, const std::vector<int>& train_conditions,
                                     const TrainConfig& cfg, const Mat& embedding,
                                     const TrainHooks& hooks = {}) {
  for (int c : train_conditions) {
    if (c < 0 || (embedding.rows() > 0 && c >= embedding.rows())) {
      throw DataError("condition " + std::to_string(c) + " has no embedding");
    }
  }
  auto tasks = precompute_condition_couplings(ds, train_conditions, cfg);
  TrainState st = init_train_state(ds.dim, cfg, embedding);
  TrainResult r;
  r.log = run_training(st, tasks, cfg, cfg.steps, hooks, &r.stats);
  r.params = std::move(st.params);
  return r;
}

}  // namespace wfrmfm
