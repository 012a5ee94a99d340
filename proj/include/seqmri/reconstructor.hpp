#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "seqmri/unet.hpp"

namespace seqmri {

struct ReconConfig {
  int height = 64;
  int width = 64;
  int unet_base = 16;
  double norm_quantile = 0.99;
};

template <class T>
void recon_init(Params<T>& params, const ReconConfig& cfg, Rng& rng) {
  unet_init(params, "recon.", UNetSpec{2, 1, cfg.unet_base}, rng);
}

// q-th order statistic of the pixel magnitudes of a [2,H,W] grid, as a scalar
// node. Differentiable through the selected pixel.
template <class T>
Node<T> magnitude_quantile(Node<T> g, double q) {
  Tape<T>* tp = g.tape;
  const Tensor<T>& gv = g.value();
  if (gv.rank() != 3 || gv.shape[0] != 2) throw ShapeError("magnitude_quantile: [2,H,W]");
  const long long plane = static_cast<long long>(gv.shape[1]) * gv.shape[2];
  std::vector<T> m2(plane);
  for (long long i = 0; i < plane; ++i)
    m2[i] = gv[i] * gv[i] + gv[plane + i] * gv[plane + i];
  std::vector<long long> idx(plane);
  std::iota(idx.begin(), idx.end(), 0);
  const long long k = static_cast<long long>(q * static_cast<double>(plane - 1));
  std::nth_element(idx.begin(), idx.begin() + k, idx.end(),
                   [&](long long a, long long b) { return m2[a] < m2[b]; });
  const long long sel = idx[k];
  const T s = static_cast<T>(std::sqrt(static_cast<double>(m2[sel])));
  const int gid = g.id, oid = tp->next_id();
  auto back = [tp, gid, oid, sel, plane]() {
    const T go = tp->out_grad(oid)[0];
    const Tensor<T>& gv2 = tp->value(gid);
    const T sv = tp->value(oid)[0];
    if (sv <= T(0)) return;
    Tensor<T>& gg = tp->grad_buf(gid);
    gg[sel] += go * gv2[sel] / sv;
    gg[plane + sel] += go * gv2[plane + sel] / sv;
  };
  return tp->push(Tensor<T>::scalar(s), g.requires_grad(), back);
}

// A_w: zero-filled complex image in, real image out. Input is scaled by the
// 99th-percentile magnitude before the UNet and the output scaled back.
template <class T>
Node<T> reconstruct(const ParamLeaves<T>& pl, const ReconConfig& cfg, Node<T> x_hat) {
  const Tensor<T>& xv = x_hat.value();
  if (xv.rank() != 3 || xv.shape[0] != 2 || xv.shape[1] != cfg.height ||
      xv.shape[2] != cfg.width)
    throw ShapeError("reconstruct: [2,H,W] extent mismatch");
  Node<T> s = magnitude_quantile(x_hat, cfg.norm_quantile);
  const bool normalize = s.value()[0] > T(1e-8);
  Node<T> in = normalize ? div(x_hat, s) : x_hat;
  Node<T> out = unet_forward(pl, "recon.", in);
  if (normalize) out = mul(out, s);
  return reshape(out, {cfg.height, cfg.width});
}

}  // namespace seqmri
