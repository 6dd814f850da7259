#pragma once

#include <cmath>
#include <cstdint>

#include "wfrmfm/meanfield_net.hpp"

namespace wfrmfm {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  MeanFieldParams m;  // first moment, parameter-shaped
  MeanFieldParams v;  // second moment
  std::uint64_t step = 0;
};

inline AdamState adam_init(const MeanFieldParams& p) { return {zeros_like(p), zeros_like(p), 0}; }

namespace detail {

template <typename F>
void zip_tensors(MeanFieldParams& p, const MeanFieldParams& g, MeanFieldParams& m, MeanFieldParams& v, F&& f) {
  for (int h = 0; h < 2; ++h) {
    Head& ph = h ? p.h : p.v;
    const Head& gh = h ? g.h : g.v;
    Head& mh = h ? m.h : m.v;
    Head& vh = h ? v.h : v.v;
    for (std::size_t l = 0; l < ph.layers.size(); ++l) {
      f(ph.layers[l].W, gh.layers[l].W, mh.layers[l].W, vh.layers[l].W);
      f(ph.layers[l].b, gh.layers[l].b, mh.layers[l].b, vh.layers[l].b);
    }
  }
}

}  // namespace detail

/// Bias-corrected Adam step, in place.
inline void adam_update(AdamState& st, MeanFieldParams& p, const MeanFieldGrads& g, const AdamConfig& cfg) {
  ++st.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  detail::zip_tensors(p, g, st.m, st.v, [&](auto& w, const auto& gw, auto& mw, auto& vw) {
    for (Eigen::Index k = 0; k < w.size(); ++k) {
      const double gk = gw.data()[k];
      double& mk = mw.data()[k];
      double& vk = vw.data()[k];
      mk = cfg.beta1 * mk + (1.0 - cfg.beta1) * gk;
      vk = cfg.beta2 * vk + (1.0 - cfg.beta2) * gk * gk;
      const double mhat = mk / c1;
      const double vhat = vk / c2;
      w.data()[k] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  });
}

}  // namespace wfrmfm
