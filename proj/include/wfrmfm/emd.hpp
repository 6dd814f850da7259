#pragma once

// Exact balanced transport between two discrete distributions with a dense
// cost matrix: primal network simplex on the complete bipartite graph with a
// spanning-tree basis (parent/thread/successor-count representation) and
// block-search pricing. Non-tree arcs never carry flow because the graph is
// uncapacitated.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "wfrmfm/types.hpp"

namespace wfrmfm {

struct EmdResult {
  double cost = 0.0;
  Mat plan;  // only filled when requested
  std::int64_t pivots = 0;
  bool optimal = false;
};

namespace detail {

class NetworkSimplex {
 public:
  // a: supplies (n), b: demands (m), C: n x m costs.
  NetworkSimplex(const Vec& a, const Vec& b, const Mat& C)
      : n_(static_cast<int>(a.size())), m_(static_cast<int>(b.size())), C_(C) {
    node_num_ = n_ + m_;
    root_ = node_num_;
    arc_num_ = static_cast<std::int64_t>(n_) * m_;
    const int total_nodes = node_num_ + 1;
    parent_.assign(total_nodes, -1);
    pred_.assign(total_nodes, -1);
    thread_.assign(total_nodes, 0);
    rev_thread_.assign(total_nodes, 0);
    succ_num_.assign(total_nodes, 0);
    last_succ_.assign(total_nodes, 0);
    pred_dir_.assign(total_nodes, 0);
    pi_.assign(total_nodes, 0.0);
    supply_.assign(total_nodes, 0.0);
    flow_.assign(static_cast<std::size_t>(arc_num_ + node_num_), 0.0);
    state_.assign(static_cast<std::size_t>(arc_num_ + node_num_), kLower);
    art_source_.assign(node_num_, 0);
    art_target_.assign(node_num_, 0);
    art_cost_.assign(node_num_, 0.0);

    double max_cost = 0.0;
    for (Eigen::Index k = 0; k < C_.size(); ++k) max_cost = std::max(max_cost, std::abs(C_.data()[k]));
    tol_ = 1e-12 * std::max(1.0, max_cost);
    const double art = (max_cost + 1.0) * node_num_;

    double sum = 0.0;
    for (int i = 0; i < n_; ++i) {
      supply_[i] = a[i];
      sum += a[i];
    }
    for (int j = 0; j < m_; ++j) {
      supply_[n_ + j] = -b[j];
      sum -= b[j];
    }
    supply_[root_] = -sum;

    parent_[root_] = -1;
    pred_[root_] = -1;
    thread_[root_] = 0;
    rev_thread_[0] = root_;
    succ_num_[root_] = node_num_ + 1;
    last_succ_[root_] = root_ - 1;
    pi_[root_] = 0.0;
    for (int u = 0; u < node_num_; ++u) {
      const std::int64_t e = arc_num_ + u;
      parent_[u] = root_;
      pred_[u] = e;
      thread_[u] = u + 1;
      rev_thread_[u + 1] = u;
      succ_num_[u] = 1;
      last_succ_[u] = u;
      state_[static_cast<std::size_t>(e)] = kTree;
      if (supply_[u] >= 0.0) {
        pred_dir_[u] = kUp;
        pi_[u] = 0.0;
        art_source_[u] = u;
        art_target_[u] = root_;
        flow_[static_cast<std::size_t>(e)] = supply_[u];
        art_cost_[u] = 0.0;
      } else {
        pred_dir_[u] = kDown;
        pi_[u] = art;
        art_source_[u] = root_;
        art_target_[u] = u;
        flow_[static_cast<std::size_t>(e)] = -supply_[u];
        art_cost_[u] = art;
      }
    }
    block_size_ = std::max<std::int64_t>(10, static_cast<std::int64_t>(std::ceil(std::sqrt(double(arc_num_)))));
  }

  EmdResult run(bool want_plan, std::int64_t max_pivots) {
    EmdResult r;
    while (find_entering_arc()) {
      if (++r.pivots > max_pivots) throw NumericError("network simplex: pivot limit reached");
      find_join_node();
      find_leaving_arc();
      change_flow();
      update_tree_structure();
      update_potential();
    }
    r.optimal = true;
    double cost = 0.0;
    if (want_plan) r.plan = Mat::Zero(n_, m_);
    for (int u = 0; u < node_num_; ++u) {
      const std::int64_t e = pred_[u];
      if (e >= 0 && e < arc_num_) {
        const double f = flow_[static_cast<std::size_t>(e)];
        cost += f * cost_of(e);
        if (want_plan) r.plan(source(e), target(e) - n_) += f;
      }
    }
    r.cost = cost;
    return r;
  }

 private:
  static constexpr int kUp = 1;
  static constexpr int kDown = -1;
  static constexpr signed char kTree = 0;
  static constexpr signed char kLower = 1;

  int source(std::int64_t e) const {
    return e < arc_num_ ? static_cast<int>(e / m_) : art_source_[static_cast<std::size_t>(e - arc_num_)];
  }
  int target(std::int64_t e) const {
    return e < arc_num_ ? n_ + static_cast<int>(e % m_) : art_target_[static_cast<std::size_t>(e - arc_num_)];
  }
  double cost_of(std::int64_t e) const {
    return e < arc_num_ ? C_(static_cast<Eigen::Index>(e / m_), static_cast<Eigen::Index>(e % m_))
                        : art_cost_[static_cast<std::size_t>(e - arc_num_)];
  }

  // Block search over the real arcs (artificial arcs never re-enter).
  bool find_entering_arc() {
    double min = 0.0;
    std::int64_t cnt = block_size_;
    std::int64_t e = next_arc_;
    for (std::int64_t k = 0; k < arc_num_; ++k) {
      const auto i = static_cast<int>(e / m_);
      const auto j = static_cast<int>(e % m_);
      if (state_[static_cast<std::size_t>(e)] == kLower) {
        const double c = C_(i, j) + pi_[i] - pi_[n_ + j];
        if (c < min) {
          min = c;
          in_arc_ = e;
        }
      }
      if (++e == arc_num_) e = 0;
      if (--cnt == 0) {
        if (min < -tol_) {
          next_arc_ = e;
          return true;
        }
        cnt = block_size_;
      }
    }
    if (min < -tol_) {
      next_arc_ = e;
      return true;
    }
    return false;
  }

  void find_join_node() {
    int u = source(in_arc_), v = target(in_arc_);
    while (u != v) {
      if (succ_num_[u] < succ_num_[v]) {
        u = parent_[u];
      } else {
        v = parent_[v];
      }
    }
    join_ = u;
  }

  void find_leaving_arc() {
    const int first = source(in_arc_), second = target(in_arc_);
    delta_ = std::numeric_limits<double>::infinity();
    int result = 0;
    for (int u = first; u != join_; u = parent_[u]) {
      if (pred_dir_[u] == kUp) {
        const double d = flow_[static_cast<std::size_t>(pred_[u])];
        if (d < delta_) {
          delta_ = d;
          u_out_ = u;
          result = 1;
        }
      }
    }
    for (int u = second; u != join_; u = parent_[u]) {
      if (pred_dir_[u] == kDown) {
        const double d = flow_[static_cast<std::size_t>(pred_[u])];
        if (d <= delta_) {
          delta_ = d;
          u_out_ = u;
          result = 2;
        }
      }
    }
    if (result == 0) throw NumericError("network simplex: unbounded cycle");
    if (result == 1) {
      u_in_ = first;
      v_in_ = second;
    } else {
      u_in_ = second;
      v_in_ = first;
    }
  }

  void change_flow() {
    if (delta_ > 0.0) {
      flow_[static_cast<std::size_t>(in_arc_)] += delta_;
      for (int u = source(in_arc_); u != join_; u = parent_[u]) {
        flow_[static_cast<std::size_t>(pred_[u])] -= pred_dir_[u] * delta_;
      }
      for (int u = target(in_arc_); u != join_; u = parent_[u]) {
        flow_[static_cast<std::size_t>(pred_[u])] += pred_dir_[u] * delta_;
      }
    }
    state_[static_cast<std::size_t>(in_arc_)] = kTree;
    const auto out = static_cast<std::size_t>(pred_[u_out_]);
    flow_[out] = 0.0;
    state_[out] = kLower;
  }

  void update_tree_structure() {
    const int old_rev_thread = rev_thread_[u_out_];
    const int old_succ_num = succ_num_[u_out_];
    const int old_last_succ = last_succ_[u_out_];
    v_out_ = parent_[u_out_];

    if (u_in_ == u_out_) {
      parent_[u_in_] = v_in_;
      pred_[u_in_] = in_arc_;
      pred_dir_[u_in_] = u_in_ == source(in_arc_) ? kUp : kDown;
      if (thread_[v_in_] != u_out_) {
        int after = thread_[old_last_succ];
        thread_[old_rev_thread] = after;
        rev_thread_[after] = old_rev_thread;
        after = thread_[v_in_];
        thread_[v_in_] = u_out_;
        rev_thread_[u_out_] = v_in_;
        thread_[old_last_succ] = after;
        rev_thread_[after] = old_last_succ;
      }
    } else {
      const int thread_continue = old_rev_thread == v_in_ ? thread_[old_last_succ] : thread_[v_in_];

      // Re-hang the stem u_in .. u_out under v_in, fixing the thread order.
      int stem = u_in_;
      int par_stem = v_in_;
      int last = last_succ_[u_in_];
      int after = thread_[last];
      thread_[v_in_] = u_in_;
      dirty_revs_.clear();
      dirty_revs_.push_back(v_in_);
      while (stem != u_out_) {
        const int next_stem = parent_[stem];
        thread_[last] = next_stem;
        dirty_revs_.push_back(last);
        const int before = rev_thread_[stem];
        thread_[before] = after;
        rev_thread_[after] = before;
        parent_[stem] = par_stem;
        par_stem = stem;
        stem = next_stem;
        last = last_succ_[stem] == last_succ_[par_stem] ? rev_thread_[par_stem] : last_succ_[stem];
        after = thread_[last];
      }
      parent_[u_out_] = par_stem;
      thread_[last] = thread_continue;
      rev_thread_[thread_continue] = last;
      last_succ_[u_out_] = last;

      if (old_rev_thread != v_in_) {
        thread_[old_rev_thread] = after;
        rev_thread_[after] = old_rev_thread;
      }
      for (int u : dirty_revs_) rev_thread_[thread_[u]] = u;

      int tmp_sc = 0;
      const int tmp_ls = last_succ_[u_out_];
      for (int u = u_out_, p = parent_[u]; u != u_in_; u = p, p = parent_[u]) {
        pred_[u] = pred_[p];
        pred_dir_[u] = -pred_dir_[p];
        tmp_sc += succ_num_[u] - succ_num_[p];
        succ_num_[u] = tmp_sc;
        last_succ_[p] = tmp_ls;
      }
      pred_[u_in_] = in_arc_;
      pred_dir_[u_in_] = u_in_ == source(in_arc_) ? kUp : kDown;
      succ_num_[u_in_] = old_succ_num;
    }

    const int up_limit_out = last_succ_[join_] == v_in_ ? join_ : -1;
    const int last_succ_out = last_succ_[u_out_];
    for (int u = v_in_; u != -1 && last_succ_[u] == v_in_; u = parent_[u]) last_succ_[u] = last_succ_out;

    if (join_ != old_rev_thread && v_in_ != old_rev_thread) {
      for (int u = v_out_; u != up_limit_out && last_succ_[u] == old_last_succ; u = parent_[u]) {
        last_succ_[u] = old_rev_thread;
      }
    } else if (last_succ_out != old_last_succ) {
      for (int u = v_out_; u != up_limit_out && last_succ_[u] == old_last_succ; u = parent_[u]) {
        last_succ_[u] = last_succ_out;
      }
    }

    for (int u = v_in_; u != join_; u = parent_[u]) succ_num_[u] += old_succ_num;
    for (int u = v_out_; u != join_; u = parent_[u]) succ_num_[u] -= old_succ_num;
  }

  void update_potential() {
    const double sigma = pi_[v_in_] - pi_[u_in_] - pred_dir_[u_in_] * cost_of(in_arc_);
    const int end = thread_[last_succ_[u_in_]];
    for (int u = u_in_; u != end; u = thread_[u]) pi_[u] += sigma;
  }

  int n_, m_;
  const Mat& C_;
  int node_num_ = 0, root_ = 0;
  std::int64_t arc_num_ = 0;
  std::vector<int> parent_, thread_, rev_thread_, succ_num_, last_succ_, pred_dir_;
  std::vector<std::int64_t> pred_;
  std::vector<double> pi_, supply_, flow_;
  std::vector<signed char> state_;
  std::vector<int> art_source_, art_target_;
  std::vector<double> art_cost_;
  std::vector<int> dirty_revs_;
  std::int64_t block_size_ = 10, next_arc_ = 0;
  double tol_ = 1e-12;

  std::int64_t in_arc_ = 0;
  int join_ = 0, u_in_ = 0, v_in_ = 0, u_out_ = 0, v_out_ = 0;
  double delta_ = 0.0;
};

}  // namespace detail

/// Exact min-cost transport between a and b (equal totals) for cost C.
inline EmdResult emd(const Vec& a, const Vec& b, const Mat& C, bool want_plan = false,
                     std::int64_t max_pivots = std::numeric_limits<std::int64_t>::max()) {
  if (C.rows() != a.size() || C.cols() != b.size()) throw DataError("emd: cost shape mismatch");
  if (a.size() == 0 || b.size() == 0) throw DataError("emd: empty distribution");
  if ((a.array() < 0.0).any() || (b.array() < 0.0).any()) throw DomainError("emd: negative mass");
  if (std::abs(a.sum() - b.sum()) > 1e-9 * std::max(a.sum(), b.sum())) {
    throw DomainError("emd: marginals have different totals");
  }
  if (!C.allFinite()) throw DataError("emd: non-finite cost");
  detail::NetworkSimplex ns(a, b, C);
  return ns.run(want_plan, max_pivots);
}

}  // namespace wfrmfm
