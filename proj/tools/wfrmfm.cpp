// Command-line front end: gen, couple, train, infer, eval, bench.
// Exit codes: 0 success, 2 usage, 3 data/shape error, 4 numeric failure.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "wfrmfm/config_json.hpp"
#include "wfrmfm/inference.hpp"
#include "wfrmfm/metrics.hpp"
#include "wfrmfm/oet.hpp"
#include "wfrmfm/synth.hpp"
#include "wfrmfm/trainer.hpp"

#ifndef WFRMFM_GIT_DESCRIBE
#define WFRMFM_GIT_DESCRIBE "unknown"
#endif

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace wfrmfm;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string iso_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string hardware_descriptor() {
  std::string cpu = "unknown cpu";
  std::ifstream is("/proc/cpuinfo");
  for (std::string line; std::getline(is, line);) {
    if (line.rfind("model name", 0) == 0) {
      cpu = line.substr(line.find(':') + 2);
      break;
    }
  }
  return cpu + "; " + std::to_string(std::thread::hardware_concurrency()) + " hw threads; gcc " + __VERSION__;
}

// Holds the run directory and writes the manifest on completion.
class Run {
 public:
  Run(std::string command, std::string dir, bool force, bool reuse, std::uint64_t seed, json flags, int threads)
      : dir_(std::move(dir)), start_(iso_now()) {
    manifest_["command"] = std::move(command);
    manifest_["seed"] = seed;
    manifest_["flags"] = std::move(flags);
    manifest_["git_describe"] = WFRMFM_GIT_DESCRIBE;
    manifest_["threads"] = threads;
    if (fs::exists(fs::path(dir_) / "manifest.json") && !force && !reuse) {
      throw UsageError("run directory " + dir_ + " already holds a run; pass --force to overwrite");
    }
    fs::create_directories(dir_);
  }

  std::string path(const std::string& name) {
    const auto p = (fs::path(dir_) / name).string();
    if (std::find(artifacts_.begin(), artifacts_.end(), p) == artifacts_.end()) artifacts_.push_back(p);
    return p;
  }

  json& manifest() { return manifest_; }

  void finish() {
    manifest_["start"] = start_;
    manifest_["end"] = iso_now();
    manifest_["artifacts"] = artifacts_;
    const auto p = (fs::path(dir_) / "manifest.json").string();
    std::ofstream(p) << manifest_.dump(2) << "\n";
  }

 private:
  std::string dir_;
  std::string start_;
  json manifest_;
  std::vector<std::string> artifacts_;
};

void write_json(const std::string& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path);
  os << j.dump(2) << "\n";
}

json conditions_json(const PerturbationBenchmark& b) {
  json j;
  j["train_ids"] = b.train_ids;
  j["test_ids"] = b.test_ids;
  j["embedding"] = json::array();
  for (Eigen::Index r = 0; r < b.embedding.rows(); ++r) {
    std::vector<double> row;
    for (Eigen::Index c = 0; c < b.embedding.cols(); ++c) row.push_back(b.embedding(r, c));
    j["embedding"].push_back(row);
  }
  for (const auto& s : b.specs) {
    j["specs"].push_back({{"condition_id", s.condition_id},
                          {"rho1", s.rho1},
                          {"rho2", s.rho2},
                          {"alpha_g", s.alpha_g},
                          {"n_cells", s.n_cells}});
  }
  return j;
}

struct ConditionInfo {
  std::vector<int> train_ids;
  std::vector<int> test_ids;
  Mat embedding;
};

ConditionInfo read_conditions(const std::string& path) {
  const json j = read_json_file(path);
  ConditionInfo ci;
  try {
    ci.train_ids = j.at("train_ids").get<std::vector<int>>();
    ci.test_ids = j.at("test_ids").get<std::vector<int>>();
    const auto rows = j.at("embedding").get<std::vector<std::vector<double>>>();
    if (!rows.empty()) {
      ci.embedding.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
      for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != rows[0].size()) throw DataError(path + ": ragged embedding");
        for (std::size_t c = 0; c < rows[r].size(); ++c) {
          ci.embedding(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
        }
      }
    }
  } catch (const json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  return ci;
}

int resolve_threads(int flag) {
  if (flag > 0) return flag;
  if (const char* env = std::getenv("WFR_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) return n;
    } catch (const std::exception&) {
    }
    throw UsageError("WFR_THREADS must be a positive integer");
  }
  return 1;
}

// ---------------------------------------------------------------------------

struct Common {
  std::string out;
  bool force = false;
  int threads = 0;
};

void add_common(CLI::App* sc, Common& c) {
  sc->add_option("--out", c.out, "Run directory")->required();
  sc->add_flag("--force", c.force, "Overwrite an existing run directory");
  sc->add_option("--threads", c.threads, "Worker cap (falls back to WFR_THREADS)");
}

struct GenArgs {
  Common common;
  std::string dataset;
  std::uint64_t seed = 0;
  int conditions = 50;
  int train_split = 20;
  int n0 = 0;
  int dim = 0;
};

void cmd_gen(const GenArgs& a) {
  if (a.dataset != "gene" && a.dataset != "gaussian" && a.dataset != "perturb") {
    throw UsageError("unknown dataset '" + a.dataset + "' (expected gene, gaussian or perturb)");
  }
  json flags = {{"dataset", a.dataset}, {"seed", a.seed}};
  Run run("gen", a.common.out, a.common.force, false, a.seed, flags, resolve_threads(a.common.threads));
  if (a.dataset == "gene") {
    GeneConfig g;
    if (a.n0 > 0) g.n0 = a.n0;
    save_snapshots(gen_gene_dataset(g, a.seed), run.path("data.csv"));
  } else if (a.dataset == "gaussian") {
    GaussianMixtureConfig g;
    if (a.dim > 0) g.d = a.dim;
    save_snapshots(gen_gaussian_mixture(g, a.seed), run.path("data.csv"));
  } else {
    PerturbationConfig pc;
    if (a.n0 > 0) pc.n_control = a.n0;
    const auto b = gen_perturbation_benchmark(pc, a.conditions, a.train_split, a.seed);
    save_snapshots(b.data, run.path("data.csv"));
    write_json(run.path("conditions.json"), conditions_json(b));
    run.manifest()["flags"]["conditions"] = a.conditions;
    run.manifest()["flags"]["train_split"] = a.train_split;
  }
  run.finish();
}

struct CoupleArgs {
  Common common;
  std::string data;
  double delta = 1.5;
  double epsilon = 0.0;
  int max_iter = 100000;
  double tol = 1e-9;
};

void cmd_couple(const CoupleArgs& a) {
  const auto ds = load_snapshots(a.data);
  json flags = {{"data", a.data}, {"delta", a.delta}, {"epsilon", a.epsilon}, {"max_iter", a.max_iter}, {"tol", a.tol}};
  Run run("couple", a.common.out, a.common.force, false, 0, flags, resolve_threads(a.common.threads));
  json summary = json::array();
  for (std::size_t k = 0; k + 1 < ds.time_grid.size(); ++k) {
    const auto plan = solve_oet(ds.at(k), ds.at(k + 1), a.delta, a.epsilon, a.max_iter, a.tol);
    const auto name = "plan_" + std::to_string(k) + ".bin";
    save_plan(plan, run.path(name));
    summary.push_back({{"segment", k},
                       {"file", name},
                       {"epsilon", plan.epsilon},
                       {"iterations", plan.iterations},
                       {"converged", plan.converged},
                       {"mass", plan.entries.sum()}});
    std::cout << "segment " << k << ": " << plan.iterations << " iterations, converged=" << plan.converged << "\n";
  }
  write_json(run.path("couplings.json"), summary);
  run.finish();
}

struct TrainArgs {
  Common common;
  std::string data;
  std::string preset_name;
  std::string config;
  std::string conditions;
  bool resume = false;
  bool condition_mode = false;
  // Overrides; unset options keep the config/preset value.
  std::optional<int> steps, batch_size, oet_batch, depth, width, checkpoint_every, condition_batch;
  std::optional<double> delta, p_diff, lambda, lr, epsilon, sigma;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> lr_schedule;
};

TrainConfig resolve_train_config(const TrainArgs& a, const json& saved) {
  TrainConfig cfg;
  json file;
  if (!a.config.empty()) file = read_json_file(a.config);
  std::string preset_name = a.preset_name;
  if (file.is_object() && file.contains("preset")) {
    const auto fp = file["preset"].get<std::string>();
    if (!preset_name.empty() && fp != preset_name) {
      throw UsageError("--preset " + preset_name + " conflicts with preset '" + fp + "' in " + a.config);
    }
    preset_name = fp;
  }
  if (!preset_name.empty()) {
    try {
      cfg = preset(preset_name);
    } catch (const DomainError& e) {
      throw UsageError(e.what());
    }
  }
  if (!saved.is_null()) apply_json(cfg, saved);
  if (!file.is_null()) apply_json(cfg, file);
  if (a.steps) cfg.steps = *a.steps;
  if (a.batch_size) cfg.batch_size = *a.batch_size;
  if (a.oet_batch) cfg.oet_batch = *a.oet_batch;
  if (a.depth) cfg.depth = *a.depth;
  if (a.width) cfg.width = *a.width;
  if (a.checkpoint_every) cfg.checkpoint_every = *a.checkpoint_every;
  if (a.condition_batch) cfg.condition_batch = *a.condition_batch;
  if (a.delta) cfg.delta = *a.delta;
  if (a.p_diff) cfg.p_diff = *a.p_diff;
  if (a.lambda) cfg.lambda = *a.lambda;
  if (a.lr) cfg.adam.lr = *a.lr;
  if (a.epsilon) cfg.epsilon = *a.epsilon;
  if (a.sigma) cfg.sigma = *a.sigma;
  if (a.seed) cfg.seed = *a.seed;
  if (a.lr_schedule) cfg.lr_schedule = *a.lr_schedule == "cosine" ? LrSchedule::Cosine : LrSchedule::Constant;
  cfg.validate();
  return cfg;
}

void write_state_atomic(const TrainState& st, const std::string& path) {
  const auto tmp = path + ".tmp";
  save_train_state(st, tmp);
  fs::rename(tmp, path);
}

void cmd_train(const TrainArgs& a) {
  const fs::path dir(a.common.out);
  json saved;
  if (a.resume) {
    if (!fs::exists(dir / "state.bin") || !fs::exists(dir / "config.json")) {
      throw UsageError("--resume needs state.bin and config.json in " + a.common.out);
    }
    saved = read_json_file((dir / "config.json").string());
  }
  const TrainConfig cfg = resolve_train_config(a, saved);
  const auto ds = load_snapshots(a.data);

  json flags = {{"data", a.data}, {"resume", a.resume}, {"condition_mode", a.condition_mode}};
  if (!a.preset_name.empty()) flags["preset"] = a.preset_name;
  if (!a.config.empty()) flags["config"] = a.config;
  Run run("train", a.common.out, a.common.force, a.resume, cfg.seed, flags, resolve_threads(a.common.threads));
  run.manifest()["config"] = to_json(cfg);
  write_json(run.path("config.json"), to_json(cfg));

  std::vector<std::unique_ptr<TaskCoupling>> tasks;
  Mat embedding;
  if (a.condition_mode) {
    const auto cpath = a.conditions.empty() ? (fs::path(a.data).parent_path() / "conditions.json").string()
                                            : a.conditions;
    const auto ci = read_conditions(cpath);
    embedding = ci.embedding;
    for (int c : ci.train_ids) {
      if (c < 0 || c >= embedding.rows()) throw DataError("condition " + std::to_string(c) + " has no embedding");
    }
    tasks = precompute_condition_couplings(ds, ci.train_ids, cfg);
    run.manifest()["flags"]["conditions"] = cpath;
  } else {
    tasks = precompute_couplings(ds, cfg);
  }

  TrainState st;
  std::vector<std::string> kept_log;
  const auto log_path = run.path("train_log.csv");
  if (a.resume) {
    st = load_train_state((dir / "state.bin").string());
    if (st.params.d != ds.dim) throw DataError("saved state does not match the data dimension");
    // Keep log rows up to the resumed step.
    std::ifstream is(log_path);
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
      if (std::stoll(line.substr(0, line.find(','))) <= st.step) kept_log.push_back(line);
    }
  } else {
    st = init_train_state(ds.dim, cfg, embedding);
  }
  std::ofstream log(log_path, std::ios::trunc);
  write_train_log({}, log, true);
  for (const auto& l : kept_log) log << l << "\n";

  TrainHooks hooks;
  hooks.on_step = [&](const TrainLogRow& r) { write_train_log({r}, log, false); };
  const auto state_path = run.path("state.bin");
  const auto ckpt_path = run.path("model.ckpt");
  hooks.checkpoint = [&](const TrainState& s) {
    log.flush();
    write_state_atomic(s, state_path);
  };
  TrainStats stats;
  try {
    run_training(st, tasks, cfg, cfg.steps, hooks, &stats);
  } catch (const TrainingAborted& e) {
    log.flush();
    save_checkpoint(e.last_good_params, run.path("model.last_good.ckpt"));
    run.manifest()["aborted_at_step"] = e.failed_step;
    run.finish();
    throw;
  }
  log.flush();
  save_checkpoint(st.params, ckpt_path);
  write_state_atomic(st, state_path);
  run.manifest()["dropped_out_of_cone"] = stats.dropped_out_of_cone;
  run.manifest()["dropped_collapse"] = stats.dropped_collapse;
  run.finish();
  std::cout << "trained " << st.step << " steps\n";
}

struct InferArgs {
  Common common;
  std::string ckpt, data, partition;
  int steps = 0;
  int substeps = 1;
  std::vector<int> conditions;
};

void cmd_infer(const InferArgs& a) {
  if ((a.steps > 0) == !a.partition.empty()) throw UsageError("give exactly one of --steps K or --partition data");
  if (!a.partition.empty() && a.partition != "data") throw UsageError("--partition accepts only 'data'");
  if (a.substeps < 1) throw UsageError("--substeps must be >= 1");
  const auto p = load_checkpoint(a.ckpt);
  const auto ds = load_snapshots(a.data);
  if (p.d != ds.dim) {
    throw DataError("checkpoint dimension " + std::to_string(p.d) + " does not match data dimension " +
                    std::to_string(ds.dim));
  }
  json flags = {{"ckpt", a.ckpt}, {"data", a.data}, {"steps", a.steps}, {"partition", a.partition},
                {"substeps", a.substeps}, {"conditions", a.conditions}};
  Run run("infer", a.common.out, a.common.force, false, 0, flags, resolve_threads(a.common.threads));

  const auto grid = ds.normalized_grid();
  const std::vector<double> part = a.steps > 0 ? refine_partition({0.0, 1.0}, a.steps) : refine_partition(grid, a.substeps);
  // Snapshot times to emit: every data time for the data partition, the end
  // time otherwise.
  std::vector<std::pair<std::size_t, double>> emit;  // (step index, raw time)
  if (a.steps > 0) {
    emit.push_back({part.size() - 2, ds.time_grid.back()});
  } else {
    for (std::size_t k = 1; k < grid.size(); ++k) {
      emit.push_back({k * static_cast<std::size_t>(a.substeps) - 1, ds.time_grid[k]});
    }
  }

  const WeightedCloud& src = ds.at(0);
  const WeightedCloud x0 = uniform_cloud(src.points, 1.0 / static_cast<double>(src.size()), ds.time_grid[0]);
  std::vector<WeightedCloud> out{x0};
  std::int64_t ns = 0;
  auto run_one = [&](std::optional<int> c) {
    const auto r = multi_step(p, x0, part, c, true);
    ns += r.wall_ns;
    for (const auto& [idx, time] : emit) {
      WeightedCloud w;
      w.points = r.trail_points[idx];
      w.masses = r.trail_masses[idx];
      w.time = time;
      w.condition_id = c;
      out.push_back(std::move(w));
    }
  };
  if (a.conditions.empty()) {
    run_one(std::nullopt);
  } else {
    for (int c : a.conditions) run_one(c);
  }
  save_snapshots(make_dataset(std::move(out)), run.path("pred.csv"));
  run.manifest()["wall_ns"] = ns;
  run.finish();
  std::printf("infer: %zu cells, %zu steps, %.3f ms\n", src.size(), part.size() - 1, static_cast<double>(ns) * 1e-6);
}

struct EvalArgs {
  Common common;
  std::string pred, ref;
};

void cmd_eval(const EvalArgs& a) {
  const auto pred = load_snapshots(a.pred);
  const auto ref = load_snapshots(a.ref);
  json flags = {{"pred", a.pred}, {"ref", a.ref}};
  Run run("eval", a.common.out, a.common.force, false, 0, flags, resolve_threads(a.common.threads));
  const auto rep = compare_datasets(pred, ref);
  json j = to_json(rep);
  j["hardware"] = hardware_descriptor();
  write_json(run.path("eval.json"), j);
  std::ofstream csv(run.path("eval.csv"));
  write_eval_csv(rep, csv);
  run.finish();
  std::printf("mean W1 %.6g, mean RME %.6g over %zu snapshots\n", rep.mean_w1, rep.mean_rme, rep.per_time.size());
}

struct BenchArgs {
  Common common;
  std::string ckpt, data;
  std::vector<int> k_list{1, 2, 5, 10, 20, 50, 100};
  int repeats = 1000;
  int euler_steps = 100;
  int euler_repeats = 0;
};

void cmd_bench(const BenchArgs& a) {
  if (a.repeats < 1) throw UsageError("--repeats must be >= 1");
  for (int k : a.k_list) {
    if (k < 1) throw UsageError("--k-list entries must be >= 1");
  }
  const auto p = load_checkpoint(a.ckpt);
  const auto ds = load_snapshots(a.data);
  if (p.d != ds.dim) {
    throw DataError("checkpoint dimension " + std::to_string(p.d) + " does not match data dimension " +
                    std::to_string(ds.dim));
  }
  json flags = {{"ckpt", a.ckpt}, {"data", a.data}, {"k_list", a.k_list}, {"repeats", a.repeats},
                {"euler_steps", a.euler_steps}};
  Run run("bench", a.common.out, a.common.force, false, 0, flags, resolve_threads(a.common.threads));
  const int er = a.euler_repeats > 0 ? a.euler_repeats : a.repeats;
  const auto b = bench(p, ds, a.k_list, a.repeats, er, a.euler_steps);
  json j;
  j["hardware"] = hardware_descriptor();
  j["cells"] = ds.at(0).size();
  for (const auto& row : b.rows) {
    j["sweep"].push_back({{"K", row.K}, {"timing", to_json(row.timing)}, {"accuracy", to_json(row.accuracy)}});
  }
  j["one_step"] = to_json(b.one_step);
  j["euler"] = to_json(b.euler);
  j["speedup"] = b.euler.median_ns / b.one_step.median_ns;
  j["fit"] = {{"slope_ns", b.fit.slope}, {"intercept_ns", b.fit.intercept}, {"r2", b.fit.r2}};
  write_json(run.path("bench.json"), j);
  std::ofstream csv(run.path("bench.csv"));
  write_bench_csv(b, csv);
  run.finish();
  std::printf("one-step %.0f ns, euler(%d) %.0f ns, speedup %.1fx, R2 %.4f\n", b.one_step.median_ns, a.euler_steps,
              b.euler.median_ns, b.euler.median_ns / b.one_step.median_ns, b.fit.r2);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unbalanced mean-flow trajectory inference"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic dataset");
  add_common(g, gen.common);
  g->add_option("--dataset", gen.dataset, "gene | gaussian | perturb")->required();
  g->add_option("--seed", gen.seed, "Random seed");
  g->add_option("--conditions", gen.conditions, "Perturbation conditions");
  g->add_option("--train-split", gen.train_split, "Training conditions (the first ids)");
  g->add_option("--n0", gen.n0, "Initial population (gene) or control size (perturb)");
  g->add_option("--dim", gen.dim, "Ambient dimension (gaussian)");

  CoupleArgs couple;
  auto* c = app.add_subcommand("couple", "Solve the transport plan of every consecutive snapshot pair");
  add_common(c, couple.common);
  c->add_option("--data", couple.data, "Snapshot CSV")->required();
  c->add_option("--delta", couple.delta, "Cone radius parameter");
  c->add_option("--epsilon", couple.epsilon, "Entropic regularization (<=0: default)");
  c->add_option("--max-iter", couple.max_iter, "Iteration cap");
  c->add_option("--tol", couple.tol, "Convergence tolerance");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train the mean-field model");
  add_common(t, train.common);
  t->add_option("--data", train.data, "Snapshot CSV")->required();
  t->add_option("--preset", train.preset_name, "gene | dyngen | gaussian | perturb");
  t->add_option("--config", train.config, "JSON config (overrides the preset)");
  t->add_flag("--resume", train.resume, "Continue from the run directory's last checkpoint");
  t->add_flag("--condition-mode", train.condition_mode, "Train on the conditions listed in conditions.json");
  t->add_option("--conditions", train.conditions, "conditions.json (default: next to --data)");
  t->add_option("--steps", train.steps);
  t->add_option("--batch-size", train.batch_size);
  t->add_option("--oet-batch", train.oet_batch);
  t->add_option("--depth", train.depth);
  t->add_option("--width", train.width);
  t->add_option("--checkpoint-every", train.checkpoint_every);
  t->add_option("--condition-batch", train.condition_batch);
  t->add_option("--delta", train.delta);
  t->add_option("--p-diff", train.p_diff);
  t->add_option("--lambda", train.lambda);
  t->add_option("--lr", train.lr);
  t->add_option("--lr-schedule", train.lr_schedule, "constant | cosine")
      ->check(CLI::IsMember({"constant", "cosine"}));
  t->add_option("--epsilon", train.epsilon);
  t->add_option("--sigma", train.sigma);
  t->add_option("--seed", train.seed);

  InferArgs infer;
  auto* i = app.add_subcommand("infer", "Push the first snapshot through the trained model");
  add_common(i, infer.common);
  i->add_option("--ckpt", infer.ckpt, "Model checkpoint")->required();
  i->add_option("--data", infer.data, "Snapshot CSV")->required();
  i->add_option("--steps", infer.steps, "K equal steps over the whole time range");
  i->add_option("--partition", infer.partition, "'data': step through the dataset's times");
  i->add_option("--substeps", infer.substeps, "Equal steps per data segment with --partition data");
  i->add_option("--condition", infer.conditions, "Condition id (repeatable)");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Score predictions against reference snapshots");
  add_common(e, ev.common);
  e->add_option("--pred", ev.pred, "Predicted snapshot CSV")->required();
  e->add_option("--ref", ev.ref, "Reference snapshot CSV")->required();

  BenchArgs be;
  auto* b = app.add_subcommand("bench", "Timing and accuracy sweep over steps per segment");
  add_common(b, be.common);
  b->add_option("--ckpt", be.ckpt, "Model checkpoint")->required();
  b->add_option("--data", be.data, "Snapshot CSV")->required();
  b->add_option("--k-list", be.k_list, "Steps per segment")->delimiter(',');
  b->add_option("--repeats", be.repeats, "Timed runs per K");
  b->add_option("--euler-steps", be.euler_steps, "Reference Euler steps");
  b->add_option("--euler-repeats", be.euler_repeats, "Timed Euler runs (default: --repeats)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    if (err.get_exit_code() == 0) return app.exit(err);
    std::cerr << "error: " << err.what() << "\n";
    const CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    std::cerr << sub->help();
    return 2;
  }

  try {
    if (*g) cmd_gen(gen);
    else if (*c) cmd_couple(couple);
    else if (*t) cmd_train(train);
    else if (*i) cmd_infer(infer);
    else if (*e) cmd_eval(ev);
    else if (*b) cmd_bench(be);
  } catch (const UsageError& err) {
    std::cerr << "error: " << err.what() << "\n" << app.help();
    return 2;
  } catch (const DomainError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  } catch (const DataError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 3;
  } catch (const NumericError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 4;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 0;
}
