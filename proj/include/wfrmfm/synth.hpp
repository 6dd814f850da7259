#pragma once

// Synthetic benchmarks: a three-gene toggle-switch SDE with growth-driven
// division, the same circuit under per-condition perturbations with death,
// and a high-dimensional Gaussian mixture with an expanding component.

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "wfrmfm/snapshot_io.hpp"

namespace wfrmfm {

/// Circuit constants shared by both SDE benchmarks.
struct GeneCircuit {
  double alpha1 = 2.0;  // self-activation
  double alpha2 = 2.0;
  double alpha3 = 10.0;
  double gamma1 = 1.0;  // cross-inhibition
  double gamma2 = 1.0;
  double gamma3 = 5.0;  // repression by gene 3
  double delta1 = 0.5;  // degradation
  double delta2 = 0.5;
  double delta3 = 1.0;
};

struct GeneConfig {
  GeneCircuit circuit;
  double beta = 0.3;      // external signal
  double eta = 0.02;      // noise amplitude, all genes
  double alpha_g = 0.08;  // division-rate amplitude, g = alpha_g X2^2 / (1 + X2^2)
  double jitter = 0.01;   // daughter perturbation sd
  double init_sd = 0.05;  // sd of genes 1-2 in the initial populations
  std::array<double, 3> transitioning{0.6, 0.6, 0.0};
  std::array<double, 3> steady{0.2, 0.2, 0.9};
  double dt = 0.01;
  int n0 = 400;
  std::vector<double> times{0.0, 8.0, 16.0, 24.0, 32.0};
  int output_dim = 2;  // leading genes written to the snapshots
};

struct GeneSimStats {
  std::int64_t divisions = 0;
  double hazard = 0.0;  // sum over steps and cells of g dt
};

namespace detail {

using Cell = std::array<double, 3>;

inline Cell gene_drift(const GeneCircuit& k, const Cell& x, double rho1, double rho2, double rho3, bool beta_form,
                       double beta) {
  const double x1 = x[0] * x[0], x2 = x[1] * x[1], x3 = x[2] * x[2];
  Cell f;
  if (beta_form) {
    f[0] = (k.alpha1 * x1 + beta) / (1.0 + k.alpha1 * x1 + k.gamma2 * x2 + k.gamma3 * x3 + beta);
    f[1] = (k.alpha2 * x2 + beta) / (1.0 + k.gamma1 * x1 + k.alpha2 * x2 + k.gamma3 * x3 + beta);
  } else {
    f[0] = (rho1 + k.alpha1 * x1) / (1.0 + k.alpha1 * x1 + k.gamma2 * x2 + k.gamma3 * x3);
    f[1] = (rho2 + k.alpha2 * x2) / (1.0 + k.gamma1 * x1 + k.alpha2 * x2 + k.gamma3 * x3);
  }
  f[2] = (rho3 + k.alpha3 * x3) / (1.0 + k.alpha3 * x3);
  f[0] -= k.delta1 * x[0];
  f[1] -= k.delta2 * x[1];
  f[2] -= k.delta3 * x[2];
  return f;
}

// Euler-Maruyama step with reflection at zero.
inline void em_step(Cell& x, const Cell& f, double dt, double eta, std::normal_distribution<double>& nd,
                    std::mt19937_64& rng) {
  const double s = std::sqrt(dt) * eta;
  for (int k = 0; k < 3; ++k) x[k] = std::abs(x[k] + f[k] * dt + s * nd(rng));
}

inline double hill(double x) { return x * x / (1.0 + x * x); }

inline WeightedCloud cells_to_cloud(const std::vector<Cell>& cells, int dim, double time) {
  Mat pts(dim, static_cast<Eigen::Index>(cells.size()));
  for (std::size_t j = 0; j < cells.size(); ++j) {
    for (int k = 0; k < dim; ++k) pts(k, static_cast<Eigen::Index>(j)) = cells[j][k];
  }
  return uniform_cloud(std::move(pts), 1.0, time);
}

}  // namespace detail

/// Gene benchmark: two initial populations (half each), EM integration with
/// division at rate g, snapshots (all masses 1) at cfg.times.
inline SnapshotDataset gen_gene_dataset(const GeneConfig& cfg, std::uint64_t seed, GeneSimStats* stats = nullptr) {
  if (cfg.n0 < 10) throw DomainError("gene dataset needs n0 >= 10");
  if (!(cfg.dt > 0.0)) throw DomainError("dt must be positive");
  if (cfg.output_dim < 1 || cfg.output_dim > 3) throw DomainError("output_dim must be 1, 2 or 3");
  if (cfg.times.empty() || cfg.times.front() != 0.0) throw DomainError("snapshot times must start at 0");
  for (std::size_t k = 1; k < cfg.times.size(); ++k) {
    if (!(cfg.times[k] > cfg.times[k - 1])) throw DomainError("snapshot times must increase");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  std::vector<detail::Cell> cells;
  const int na = cfg.n0 / 2;
  for (int i = 0; i < cfg.n0; ++i) {
    const auto& c = i < na ? cfg.transitioning : cfg.steady;
    detail::Cell x{c[0] + cfg.init_sd * nd(rng), c[1] + cfg.init_sd * nd(rng), c[2]};
    for (double& v : x) v = std::abs(v);
    cells.push_back(x);
  }

  GeneSimStats st;
  std::vector<WeightedCloud> snaps{detail::cells_to_cloud(cells, cfg.output_dim, cfg.times[0])};
  for (std::size_t k = 1; k < cfg.times.size(); ++k) {
    const auto n_steps = static_cast<long>(std::llround((cfg.times[k] - cfg.times[k - 1]) / cfg.dt));
    for (long s = 0; s < n_steps; ++s) {
      const std::size_t n = cells.size();
      for (std::size_t i = 0; i < n; ++i) {
        const auto f = detail::gene_drift(cfg.circuit, cells[i], 0.0, 0.0, 0.0, true, cfg.beta);
        detail::em_step(cells[i], f, cfg.dt, cfg.eta, nd, rng);
      }
      if (cfg.alpha_g > 0.0) {
        for (std::size_t i = 0; i < n; ++i) {
          const double g = cfg.alpha_g * detail::hill(cells[i][1]);
          st.hazard += g * cfg.dt;
          if (unif(rng) < g * cfg.dt) {
            detail::Cell d = cells[i];
            for (double& v : d) v = std::abs(v + cfg.jitter * nd(rng));
            cells.push_back(d);
            ++st.divisions;
          }
        }
      }
    }
    snaps.push_back(detail::cells_to_cloud(cells, cfg.output_dim, cfg.times[k]));
  }
  if (stats) *stats = st;
  return make_dataset(std::move(snaps));
}

// ---------------------------------------------------------------------------
// Perturbation benchmark.

struct PerturbationSpec {
  int condition_id = 0;
  double rho1 = 0.0;
  double rho2 = 0.0;
  double alpha_g = 0.0;
  int n_cells = 0;  // perturbed cells after death
};

struct PerturbationConfig {
  GeneCircuit circuit;
  double rho3 = 0.0;
  double eta = 0.02;
  double dt = 0.01;
  double horizon = 3.0;  // simulated time between control and readout
  int n_control = 300;
  std::array<double, 3> control_mean{0.5, 0.5, 0.8};
  double control_sd = 0.1;
  double rho_min = 0.0, rho_max = 2.0;
  double alpha_g_min = 0.0, alpha_g_max = 1.0;
};

struct PerturbationBenchmark {
  SnapshotDataset data;  // control at t=0 (cond -1), one cloud per condition at t=1
  std::vector<PerturbationSpec> specs;
  std::vector<int> train_ids;
  std::vector<int> test_ids;
  Mat embedding;  // n_conditions x 3, (rho1, rho2, alpha_g) standardized over train
};

/// Perturbed readout of `control` under one condition: EM integration with
/// per-step death probability g dt, g = alpha_g X3^2 / (1 + X3^2).
inline std::vector<std::array<double, 3>> simulate_perturbation(const PerturbationConfig& cfg,
                                                                const std::vector<std::array<double, 3>>& control,
                                                                double rho1, double rho2, double alpha_g,
                                                                std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto cells = control;
  const auto n_steps = static_cast<long>(std::llround(cfg.horizon / cfg.dt));
  for (long s = 0; s < n_steps; ++s) {
    for (auto& x : cells) {
      const auto f = detail::gene_drift(cfg.circuit, x, rho1, rho2, cfg.rho3, false, 0.0);
      detail::em_step(x, f, cfg.dt, cfg.eta, nd, rng);
    }
    if (alpha_g > 0.0) {
      std::vector<std::array<double, 3>> alive;
      alive.reserve(cells.size());
      for (const auto& x : cells) {
        if (!(unif(rng) < alpha_g * detail::hill(x[2]) * cfg.dt)) alive.push_back(x);
      }
      cells = std::move(alive);
    }
  }
  return cells;
}

inline PerturbationBenchmark gen_perturbation_benchmark(const PerturbationConfig& cfg, int n_conditions, int n_train,
                                                        std::uint64_t seed) {
  if (n_train < 1 || n_train >= n_conditions) throw DomainError("need 1 <= n_train < n_conditions");
  if (cfg.n_control < 1) throw DomainError("n_control must be >= 1");
  PerturbationBenchmark out;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<std::array<double, 3>> control;
  for (int i = 0; i < cfg.n_control; ++i) {
    std::array<double, 3> x;
    for (int k = 0; k < 3; ++k) x[k] = std::abs(cfg.control_mean[k] + cfg.control_sd * nd(rng));
    control.push_back(x);
  }
  std::uniform_real_distribution<double> rho(cfg.rho_min, cfg.rho_max), ag(cfg.alpha_g_min, cfg.alpha_g_max);
  for (int c = 0; c < n_conditions; ++c) {
    PerturbationSpec sp;
    sp.condition_id = c;
    sp.rho1 = rho(rng);
    sp.rho2 = rho(rng);
    sp.alpha_g = ag(rng);
    out.specs.push_back(sp);
  }

  std::vector<WeightedCloud> clouds{detail::cells_to_cloud(control, 3, 0.0)};
  for (auto& sp : out.specs) {
    std::seed_seq ss{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                     static_cast<std::uint32_t>(sp.condition_id), 0x5eedu};
    std::mt19937_64 crng(ss);
    const auto cells = simulate_perturbation(cfg, control, sp.rho1, sp.rho2, sp.alpha_g, crng);
    if (cells.empty()) throw NumericError("condition " + std::to_string(sp.condition_id) + " lost every cell");
    sp.n_cells = static_cast<int>(cells.size());
    auto cloud = detail::cells_to_cloud(cells, 3, 1.0);
    cloud.condition_id = sp.condition_id;
    clouds.push_back(std::move(cloud));
  }
  out.data = make_dataset(std::move(clouds));

  for (int c = 0; c < n_conditions; ++c) (c < n_train ? out.train_ids : out.test_ids).push_back(c);

  Mat raw(n_conditions, 3);
  for (int c = 0; c < n_conditions; ++c) raw.row(c) << out.specs[c].rho1, out.specs[c].rho2, out.specs[c].alpha_g;
  const Mat train_rows = raw.topRows(n_train);
  const Eigen::RowVectorXd mean = train_rows.colwise().mean();
  Eigen::RowVectorXd sd = ((train_rows.rowwise() - mean).array().square().colwise().sum() / n_train).sqrt();
  for (Eigen::Index k = 0; k < sd.size(); ++k) {
    if (!(sd[k] > 0.0)) sd[k] = 1.0;
  }
  out.embedding = (raw.rowwise() - mean).array().rowwise() / sd.array();
  return out;
}

// ---------------------------------------------------------------------------
// Gaussian mixture.

/// Components are isotropic Gaussians whose means live in the first two
/// coordinates; the remaining coordinates carry small noise only.
struct GaussianMixtureConfig {
  int d = 1000;
  std::array<double, 2> upper{0.0, 2.0};
  std::array<double, 2> lower{0.0, -2.0};        // source lower component
  std::array<double, 2> lower_left{-1.5, -2.0};  // target lower components
  std::array<double, 2> lower_right{1.5, -2.0};
  double lead_sd = 0.25;  // sd in the first two coordinates
  double tail_sd = 0.02;  // sd in the others
  int source_upper = 100;
  int source_lower = 400;
  int target_upper = 1000;
  int target_lower_each = 200;
};

inline SnapshotDataset gen_gaussian_mixture(const GaussianMixtureConfig& cfg, std::uint64_t seed) {
  if (cfg.d < 2) throw DomainError("gaussian mixture needs d >= 2");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  auto draw = [&](Mat& pts, Eigen::Index& col, int count, const std::array<double, 2>& mean) {
    for (int i = 0; i < count; ++i, ++col) {
      for (int k = 0; k < cfg.d; ++k) {
        pts(k, col) = k < 2 ? mean[static_cast<std::size_t>(k)] + cfg.lead_sd * nd(rng) : cfg.tail_sd * nd(rng);
      }
    }
  };
  Mat src(cfg.d, cfg.source_upper + cfg.source_lower);
  Eigen::Index col = 0;
  draw(src, col, cfg.source_upper, cfg.upper);
  draw(src, col, cfg.source_lower, cfg.lower);
  Mat tgt(cfg.d, cfg.target_upper + 2 * cfg.target_lower_each);
  col = 0;
  draw(tgt, col, cfg.target_upper, cfg.upper);
  draw(tgt, col, cfg.target_lower_each, cfg.lower_left);
  draw(tgt, col, cfg.target_lower_each, cfg.lower_right);
  return make_dataset({uniform_cloud(std::move(src), 1.0, 0.0), uniform_cloud(std::move(tgt), 1.0, 1.0)});
}

}  // namespace wfrmfm
