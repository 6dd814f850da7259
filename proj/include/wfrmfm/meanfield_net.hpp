#pragma once

// Two MLP heads v(x, t, T [, c]) and h(x, t, T [, c]) with forward evaluation,
// forward-mode JVP, reverse-mode parameter gradients and a binary checkpoint.
//
// Inputs are packed column-wise as [x; t; T; emb(c)]. Forward and tangent
// passes go through one dense kernel whose per-output accumulation order does
// not depend on the batch size, so batched and per-sample results agree bit
// for bit.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

#include "wfrmfm/oet.hpp"  // little-endian helpers
#include "wfrmfm/types.hpp"

namespace wfrmfm {

inline constexpr double kLeakySlope = 0.01;

struct Layer {
  Mat W;  // out x in
  Vec b;  // out
};

struct Head {
  std::vector<Layer> layers;
  int out_dim() const { return static_cast<int>(layers.back().W.rows()); }
};

struct MeanFieldParams {
  int d = 0;
  int e = 0;
  int depth = 5;    // linear layers per head
  int width = 256;  // hidden units
  Head v;
  Head h;
  Mat embedding;  // n_conditions x e, fixed (not trained)

  int in_dim() const { return d + 2 + e; }
  int n_conditions() const { return static_cast<int>(embedding.rows()); }
  std::size_t n_params() const {
    std::size_t n = 0;
    for (const Head* hd : {&v, &h}) {
      for (const auto& l : hd->layers) n += static_cast<std::size_t>(l.W.size() + l.b.size());
    }
    return n;
  }
};

// Gradients share the parameter layout; the embedding part is unused.
using MeanFieldGrads = MeanFieldParams;

inline MeanFieldGrads zeros_like(const MeanFieldParams& p) {
  MeanFieldGrads g = p;
  for (Head* hd : {&g.v, &g.h}) {
    for (auto& l : hd->layers) {
      l.W.setZero();
      l.b.setZero();
    }
  }
  g.embedding.setZero();
  return g;
}

namespace detail {

inline Head make_head(int in, int width, int out, int depth, std::mt19937_64& rng, bool zero_last) {
  Head hd;
  for (int l = 0; l < depth; ++l) {
    const int fan_in = l == 0 ? in : width;
    const int fan_out = l == depth - 1 ? out : width;
    Layer layer{Mat(fan_out, fan_in), Vec(fan_out)};
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> unif(-bound, bound);
    for (Eigen::Index k = 0; k < layer.W.size(); ++k) layer.W.data()[k] = unif(rng);
    for (Eigen::Index k = 0; k < layer.b.size(); ++k) layer.b[k] = unif(rng);
    if (zero_last && l == depth - 1) {
      layer.W.setZero();
      layer.b.setZero();
    }
    hd.layers.push_back(std::move(layer));
  }
  return hd;
}

}  // namespace detail

/// Fan-in uniform initialisation; the h-head output layer starts at zero.
inline MeanFieldParams init_params(int d, int e, int depth, int width, std::uint64_t seed,
                                   Mat embedding = Mat()) {
  if (d < 1) throw DomainError("init_params: d must be >= 1");
  if (depth < 1 || width < 1) throw DomainError("init_params: depth and width must be >= 1");
  if (e > 0 && embedding.cols() != e) throw DataError("init_params: embedding table width != e");
  MeanFieldParams p;
  p.d = d;
  p.e = e;
  p.depth = depth;
  p.width = width;
  std::mt19937_64 rng(seed);
  p.v = detail::make_head(p.in_dim(), width, d, depth, rng, false);
  p.h = detail::make_head(p.in_dim(), width, 1, depth, rng, true);
  p.embedding = e > 0 ? std::move(embedding) : Mat(0, 0);
  return p;
}

// ---------------------------------------------------------------------------
// Dense kernel: Out(:, j) = W * A(:, j) [+ b], accumulated with fma in input
// order for every output entry.

namespace kernel {

// Scalar reference path; also handles row remainders of the vector path.
inline void rows_scalar(const double* W, int n_out, int n_in, const double* A, const double* bias,
                        double* C, int i_begin) {
  for (int i = i_begin; i < n_out; ++i) {
    double acc = bias ? bias[i] : 0.0;
    for (int k = 0; k < n_in; ++k) acc = std::fma(W[static_cast<std::size_t>(k) * n_out + i], A[k], acc);
    C[i] = acc;
  }
}

#if defined(__AVX512F__)
// 16 output rows x JB columns held in registers; each lane performs the same
// fused multiply-add sequence as rows_scalar.
template <int JB>
inline void block16(const double* W, int n_out, int n_in, const double* A, const double* bias, double* C,
                    int i0) {
  __m512d acc0[JB], acc1[JB];
  const __m512d b0 = bias ? _mm512_loadu_pd(bias + i0) : _mm512_setzero_pd();
  const __m512d b1 = bias ? _mm512_loadu_pd(bias + i0 + 8) : _mm512_setzero_pd();
  for (int j = 0; j < JB; ++j) {
    acc0[j] = b0;
    acc1[j] = b1;
  }
  const double* cols[JB];
  for (int j = 0; j < JB; ++j) cols[j] = A + static_cast<std::size_t>(j) * n_in;
  const double* wk = W + i0;
  for (int k = 0; k < n_in; ++k, wk += n_out) {
    const __m512d w0 = _mm512_loadu_pd(wk);
    const __m512d w1 = _mm512_loadu_pd(wk + 8);
    for (int j = 0; j < JB; ++j) {
      const __m512d a = _mm512_set1_pd(cols[j][k]);
      acc0[j] = _mm512_fmadd_pd(w0, a, acc0[j]);
      acc1[j] = _mm512_fmadd_pd(w1, a, acc1[j]);
    }
  }
  for (int j = 0; j < JB; ++j) {
    _mm512_storeu_pd(C + static_cast<std::size_t>(j) * n_out + i0, acc0[j]);
    _mm512_storeu_pd(C + static_cast<std::size_t>(j) * n_out + i0 + 8, acc1[j]);
  }
}

template <int JB>
inline void columns(const double* W, int n_out, int n_in, const double* A, const double* bias, double* C) {
  int i0 = 0;
  for (; i0 + 16 <= n_out; i0 += 16) block16<JB>(W, n_out, n_in, A, bias, C, i0);
  if (i0 < n_out) {
    for (int j = 0; j < JB; ++j) {
      rows_scalar(W, n_out, n_in, A + static_cast<std::size_t>(j) * n_in, bias,
                  C + static_cast<std::size_t>(j) * n_out, i0);
    }
  }
}
#endif

/// out(:, j) = W * A(:, j) + b, every entry accumulated as a left-to-right
/// fma chain over the input index.
inline void affine(const Mat& W, const Vec* b, const Mat& A, Mat& out) {
  const int n_out = static_cast<int>(W.rows());
  const int n_in = static_cast<int>(W.cols());
  const int B = static_cast<int>(A.cols());
  out.resize(n_out, B);
  const double* bias = b ? b->data() : nullptr;
  const auto a_col = [&](int j) { return A.data() + static_cast<std::size_t>(j) * n_in; };
  const auto o_col = [&](int j) { return out.data() + static_cast<std::size_t>(j) * n_out; };
  int j = 0;
#if defined(__AVX512F__)
  for (; j + 8 <= B; j += 8) columns<8>(W.data(), n_out, n_in, a_col(j), bias, o_col(j));
  for (; j < B; ++j) columns<1>(W.data(), n_out, n_in, a_col(j), bias, o_col(j));
#else
  for (; j < B; ++j) rows_scalar(W.data(), n_out, n_in, a_col(j), bias, o_col(j), 0);
#endif
}

}  // namespace kernel

inline double leaky(double z) { return z > 0.0 ? z : kLeakySlope * z; }
// Slope of the active piece; z == 0 takes the negative branch.
inline double leaky_slope(double z) { return z > 0.0 ? 1.0 : kLeakySlope; }

// ---------------------------------------------------------------------------
// Input packing

/// Packs a batch into the network input matrix. `cond` is either empty or one
/// id per column; ids index the embedding table.
inline Mat pack_inputs(const MeanFieldParams& p, const Mat& x, const Vec& t, const Vec& T,
                       const std::vector<int>& cond = {}) {
  const auto B = x.cols();
  if (x.rows() != p.d) {
    throw DataError("input dimension " + std::to_string(x.rows()) + " does not match model dimension " +
                    std::to_string(p.d));
  }
  if (t.size() != B || T.size() != B) throw DataError("pack_inputs: time vector length mismatch");
  Mat X(p.in_dim(), B);
  X.topRows(p.d) = x;
  X.row(p.d) = t.transpose();
  X.row(p.d + 1) = T.transpose();
  if (p.e > 0) {
    if (static_cast<Eigen::Index>(cond.size()) != B) {
      throw DataError("conditional model needs one condition id per sample");
    }
    for (Eigen::Index j = 0; j < B; ++j) {
      const int c = cond[static_cast<std::size_t>(j)];
      if (c < 0 || c >= p.n_conditions()) throw DataError("unknown condition id " + std::to_string(c));
      X.col(j).tail(p.e) = p.embedding.row(c).transpose();
    }
  } else if (!cond.empty()) {
    throw DataError("unknown condition id " + std::to_string(cond.front()) + " for unconditional model");
  }
  return X;
}

// ---------------------------------------------------------------------------
// Forward / JVP

struct HeadTrace {
  std::vector<Mat> pre;   // pre-activations per layer
  std::vector<Mat> post;  // post[0] = input, post[l+1] = activation of layer l
};

inline Mat head_forward(const Head& hd, const Mat& X, HeadTrace* trace = nullptr) {
  Mat a = X, z;
  if (trace) {
    trace->pre.clear();
    trace->post.assign(1, X);
  }
  const std::size_t L = hd.layers.size();
  for (std::size_t l = 0; l < L; ++l) {
    kernel::affine(hd.layers[l].W, &hd.layers[l].b, a, z);
    if (trace) trace->pre.push_back(z);
    if (l + 1 < L) {
      a = z.unaryExpr(&leaky);
      if (trace) trace->post.push_back(a);
    } else {
      a = std::move(z);
    }
  }
  return a;
}

// Propagates value and tangent together; the tangent pass carries no bias.
inline Mat head_jvp(const Head& hd, const Mat& X, const Mat& dX, Mat& dout) {
  Mat a = X, da = dX, z, dz;
  const std::size_t L = hd.layers.size();
  for (std::size_t l = 0; l < L; ++l) {
    kernel::affine(hd.layers[l].W, &hd.layers[l].b, a, z);
    kernel::affine(hd.layers[l].W, nullptr, da, dz);
    if (l + 1 < L) {
      a = z.unaryExpr(&leaky);
      da = dz.cwiseProduct(z.unaryExpr(&leaky_slope));
    } else {
      a = std::move(z);
      da = std::move(dz);
    }
  }
  dout = std::move(da);
  return a;
}

struct BatchOutput {
  Mat v;  // d x B
  Vec h;  // B
};

struct BatchJvp {
  Mat v, dv;
  Vec h, dh;
};

inline BatchOutput forward_batch(const MeanFieldParams& p, const Mat& X) {
  BatchOutput out;
  out.v = head_forward(p.v, X);
  out.h = head_forward(p.h, X).row(0).transpose();
  return out;
}

/// Direction dX has the input layout; embedding rows of dX must be zero.
inline BatchJvp jvp_batch(const MeanFieldParams& p, const Mat& X, const Mat& dX) {
  BatchJvp r;
  Mat dh;
  r.v = head_jvp(p.v, X, dX, r.dv);
  Mat h = head_jvp(p.h, X, dX, dh);
  r.h = h.row(0).transpose();
  r.dh = dh.row(0).transpose();
  return r;
}

struct JvpResult {
  Vec value;
  Vec directional_derivative;
};

inline std::pair<Vec, double> forward(const MeanFieldParams& p, const Vec& x, double t, double T,
                                      std::optional<int> c = std::nullopt) {
  std::vector<int> cond;
  if (c) cond.push_back(*c);
  const Mat X = pack_inputs(p, x, Vec::Constant(1, t), Vec::Constant(1, T), cond);
  auto out = forward_batch(p, X);
  return {out.v.col(0), out.h[0]};
}

inline std::pair<JvpResult, JvpResult> jvp(const MeanFieldParams& p, const Vec& x, double t, double T,
                                           const Vec& dx, double dt, double dT,
                                           std::optional<int> c = std::nullopt) {
  std::vector<int> cond;
  if (c) cond.push_back(*c);
  const Mat X = pack_inputs(p, x, Vec::Constant(1, t), Vec::Constant(1, T), cond);
  Mat dX = Mat::Zero(X.rows(), 1);
  dX.col(0).head(p.d) = dx;
  dX(p.d, 0) = dt;
  dX(p.d + 1, 0) = dT;
  auto r = jvp_batch(p, X, dX);
  return {JvpResult{r.v.col(0), r.dv.col(0)}, JvpResult{Vec::Constant(1, r.h[0]), Vec::Constant(1, r.dh[0])}};
}

// ---------------------------------------------------------------------------
// Loss and reverse-mode gradients

struct LossBatch {
  Mat X;         // packed inputs, in_dim x B
  Mat v_target;  // d x B
  Vec h_target;  // B
  Vec weight;    // B
};

struct LossResult {
  double loss = 0.0;
  double loss_v = 0.0;  // mean weighted velocity term
  double loss_h = 0.0;  // mean weighted growth term, before lambda
  MeanFieldGrads grads;
};

namespace detail {

inline void head_backward(const Head& hd, const HeadTrace& tr, Mat delta, Head& g) {
  for (std::size_t l = hd.layers.size(); l-- > 0;) {
    g.layers[l].W.noalias() = delta * tr.post[l].transpose();
    g.layers[l].b = delta.rowwise().sum();
    if (l == 0) break;
    Mat back = hd.layers[l].W.transpose() * delta;
    delta = back.cwiseProduct(tr.pre[l - 1].unaryExpr(&leaky_slope));
  }
}

}  // namespace detail

/// loss = mean_b w_b (|v - v_target|^2 + lambda (h - h_target)^2).
/// Targets are plain values, so no gradient reaches them.
inline LossResult loss_and_grads(const MeanFieldParams& p, const LossBatch& batch, double lambda) {
  const auto B = batch.X.cols();
  if (B == 0) throw DataError("loss_and_grads: empty batch");
  if (batch.v_target.cols() != B || batch.h_target.size() != B || batch.weight.size() != B) {
    throw DataError("loss_and_grads: batch shape mismatch");
  }
  for (Eigen::Index j = 0; j < B; ++j) {
    if (!batch.v_target.col(j).allFinite() || !std::isfinite(batch.h_target[j]) ||
        !std::isfinite(batch.weight[j])) {
      throw NumericError("non-finite target at sample " + std::to_string(j));
    }
  }

  HeadTrace tv, th;
  const Mat v = head_forward(p.v, batch.X, &tv);
  const Mat h = head_forward(p.h, batch.X, &th);

  const double inv = 1.0 / static_cast<double>(B);
  const Mat rv = v - batch.v_target;
  const Vec rh = h.row(0).transpose() - batch.h_target;

  LossResult r;
  r.loss_v = (rv.colwise().squaredNorm().transpose().cwiseProduct(batch.weight)).sum() * inv;
  r.loss_h = (rh.cwiseAbs2().cwiseProduct(batch.weight)).sum() * inv;
  r.loss = r.loss_v + lambda * r.loss_h;

  r.grads = zeros_like(p);
  const Mat dv = rv * (2.0 * inv * batch.weight).asDiagonal();
  detail::head_backward(p.v, tv, dv, r.grads.v);
  if (lambda != 0.0) {
    const Mat dh = (2.0 * lambda * inv * rh.cwiseProduct(batch.weight)).transpose();
    detail::head_backward(p.h, th, dh, r.grads.h);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Flat views used by the optimiser and checkpoint code.

template <typename P, typename F>
void for_each_tensor(P& p, F&& f) {
  for (auto* hd : {&p.v, &p.h}) {
    for (auto& l : hd->layers) {
      f(l.W);
      f(l.b);
    }
  }
}

// ---------------------------------------------------------------------------
// Checkpoint: "WFRM", u16 version, u32 d, e, depth, width, n_conditions, then
// f64 little-endian: v-head then h-head, each layer W (row-major) then b,
// then the embedding table row-major.

inline constexpr std::uint16_t kCheckpointVersion = 1;

inline void write_params(std::ostream& os, const MeanFieldParams& p) {
  os.write("WFRM", 4);
  detail::put_le<std::uint16_t>(os, kCheckpointVersion);
  for (int v : {p.d, p.e, p.depth, p.width, p.n_conditions()}) {
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(v));
  }
  auto put_matrix = [&](const auto& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) detail::put_le<double>(os, m(i, j));
    }
  };
  for (const Head* hd : {&p.v, &p.h}) {
    for (const auto& l : hd->layers) {
      put_matrix(l.W);
      for (Eigen::Index i = 0; i < l.b.size(); ++i) detail::put_le<double>(os, l.b[i]);
    }
  }
  put_matrix(p.embedding);
}

inline MeanFieldParams read_params(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "WFRM") throw DataError("checkpoint: bad magic");
  const auto version = detail::get_le<std::uint16_t>(is);
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto d = static_cast<int>(detail::get_le<std::uint32_t>(is));
  const auto e = static_cast<int>(detail::get_le<std::uint32_t>(is));
  const auto depth = static_cast<int>(detail::get_le<std::uint32_t>(is));
  const auto width = static_cast<int>(detail::get_le<std::uint32_t>(is));
  const auto nc = static_cast<int>(detail::get_le<std::uint32_t>(is));
  if (d < 1 || depth < 1 || width < 1 || d > 1000000 || width > 1000000 || depth > 1000 ||
      (e > 0) != (nc > 0)) {
    throw DataError("checkpoint: implausible architecture header");
  }
  MeanFieldParams p = init_params(d, e, depth, width, 0, Mat::Zero(nc, e));
  auto get_matrix = [&](auto& m) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = detail::get_le<double>(is);
    }
  };
  for (Head* hd : {&p.v, &p.h}) {
    for (auto& l : hd->layers) {
      get_matrix(l.W);
      for (Eigen::Index i = 0; i < l.b.size(); ++i) l.b[i] = detail::get_le<double>(is);
    }
  }
  get_matrix(p.embedding);
  return p;
}

inline void save_checkpoint(const MeanFieldParams& p, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path);
  write_params(os, p);
  if (!os) throw DataError("failed writing checkpoint: " + path);
}

/// Loads a checkpoint; if `expect` is given the architecture must match it.
inline MeanFieldParams load_checkpoint(const std::string& path, const MeanFieldParams* expect = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  MeanFieldParams p = read_params(is);
  if (expect && (p.d != expect->d || p.e != expect->e || p.depth != expect->depth ||
                 p.width != expect->width || p.n_conditions() != expect->n_conditions())) {
    throw DataError("checkpoint architecture does not match the requested model");
  }
  return p;
}

}  // namespace wfrmfm
