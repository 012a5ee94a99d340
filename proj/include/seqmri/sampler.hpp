#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "seqmri/forward_model.hpp"
#include "seqmri/rng.hpp"
#include "seqmri/unet.hpp"

namespace seqmri {

// ---------------------------------------------------------------------------
// heatmap machinery
// ---------------------------------------------------------------------------

// softplus -> divide by max -> two-sided rescale to the exact target mean.
// Output stays in [0,1]; both rescale branches preserve the score order.
template <class T>
Node<T> normalize_heatmap(Node<T> raw, T target_mean) {
  if (!(target_mean > T(0) && target_mean < T(1)))
    throw ShapeError("normalize_heatmap: target_mean must lie in (0,1)");
  Tape<T>* tp = raw.tape;
  Node<T> sp = softplus(raw);
  Node<T> mx = reduce_max(sp);
  if (!(mx.value()[0] > T(1e-30)))  // underflowed scores: uniform fallback
    return tp->constant(Tensor<T>::full(raw.value().shape, target_mean));
  Node<T> p = div(sp, mx);
  Node<T> mu = mean(p);
  if (mu.value()[0] >= target_mean) {
    Node<T> f = div(tp->constant(Tensor<T>::scalar(target_mean)), mu);
    return mul(p, f);
  }
  Node<T> one_minus_p = add_scalar(neg(p), T(1));
  Node<T> one_minus_mu = add_scalar(neg(mu), T(1));
  Node<T> f = div(tp->constant(Tensor<T>::scalar(T(1) - target_mean)), one_minus_mu);
  return add_scalar(neg(mul(one_minus_p, f)), T(1));
}

// zero the probability of already-acquired indices: p' = p (1 - M_prev)
template <class T>
Node<T> mask_acquired(Node<T> p, const Mask& prev) {
  if (p.value().numel() != prev.index_count())
    throw ShapeError("mask_acquired: extent mismatch");
  Tensor<T> keep({prev.index_count()});
  for (int k = 0; k < prev.index_count(); ++k) keep[k] = prev.bits[k] ? T(0) : T(1);
  return mul(p, p.tape->constant(std::move(keep)));
}

// ---------------------------------------------------------------------------
// stochastic binarization with straight-through gradients
// ---------------------------------------------------------------------------

template <class T>
struct StepDraw {
  Node<T> mask_node;  // forward: cumulative mask M_t as an index vector
  Mask mask;          // same mask as plain bits
  int retries = 0;    // rejection redraws before acceptance (or fallback)
  bool fallback = false;
};

inline constexpr int kBinarizeMaxAttempts = 200;

// Draw M_t = 1_{U <= p'} + M_{t-1} with exactly `budget` new indices
// (rejection sampling, then deterministic top-S fallback). The forward value
// is binary; the recorded gradient treats the draw as sigmoid(slope (p'-U)).
// In soft mode the forward itself is the sigmoid surrogate (used for
// finite-difference checks); no exactness guarantee applies there.
template <class T>
StepDraw<T> binarize(Node<T> p, const Mask& prev, int budget, Rng& rng, T slope = T(5),
                     bool soft = false) {
  Tape<T>* tp = p.tape;
  const Tensor<T>& pv = p.value();
  const int K = prev.index_count();
  if (pv.numel() != K) throw ShapeError("binarize: heatmap/mask extent mismatch");
  if (budget < 1) throw ShapeError("binarize: budget must be >= 1");
  int free_count = 0;
  for (int k = 0; k < K; ++k)
    if (!prev.bits[k]) ++free_count;
  if (free_count < budget) throw ShapeError("binarize: budget infeasible");

  std::vector<T> U(K);
  std::vector<std::uint8_t> delta(K, 0);
  int retries = 0;
  bool fallback = false;

  auto draw = [&]() {
    for (int k = 0; k < K; ++k) U[k] = static_cast<T>(rng.uniform());
  };

  if (soft) {
    draw();
  } else {
    bool accepted = false;
    for (int attempt = 0; attempt < kBinarizeMaxAttempts; ++attempt) {
      draw();
      int count = 0;
      std::fill(delta.begin(), delta.end(), 0);
      for (int k = 0; k < K; ++k)
        if (!prev.bits[k] && U[k] <= pv[k]) {
          delta[k] = 1;
          ++count;
        }
      if (count == budget) {
        accepted = true;
        break;
      }
      ++retries;
    }
    if (!accepted) {
      // deterministic top-S with noise-perturbed tie-breaking
      fallback = true;
      std::vector<int> idx;
      idx.reserve(free_count);
      std::vector<double> tie(K);
      for (int k = 0; k < K; ++k) tie[k] = rng.uniform();
      for (int k = 0; k < K; ++k)
        if (!prev.bits[k]) idx.push_back(k);
      std::sort(idx.begin(), idx.end(), [&](int a, int b) {
        if (pv[a] != pv[b]) return pv[a] > pv[b];
        return tie[a] > tie[b];
      });
      std::fill(delta.begin(), delta.end(), 0);
      for (int s = 0; s < budget; ++s) delta[idx[s]] = 1;
    }
  }

  Mask out_mask = prev;
  Tensor<T> out({K});
  if (soft) {
    for (int k = 0; k < K; ++k) {
      const T s = static_cast<T>(
          1.0 / (1.0 + std::exp(-static_cast<double>(slope) *
                                static_cast<double>(pv[k] - U[k]))));
      out[k] = prev.bits[k] ? T(1) : s;
    }
  } else {
    for (int k = 0; k < K; ++k) {
      out_mask.bits[k] = prev.bits[k] | delta[k];
      out[k] = out_mask.bits[k] ? T(1) : T(0);
    }
  }

  const int pid = p.id, oid = tp->next_id();
  std::vector<std::uint8_t> prev_bits = prev.bits;
  auto back = [tp, pid, oid, K, slope, U, prev_bits]() {
    const Tensor<T>& go = tp->out_grad(oid);
    const Tensor<T>& pv2 = tp->value(pid);
    Tensor<T>& gp = tp->grad_buf(pid);
    for (int k = 0; k < K; ++k) {
      if (prev_bits[k]) continue;  // surrogate gradient only at free indices
      const double s = 1.0 / (1.0 + std::exp(-static_cast<double>(slope) *
                                             static_cast<double>(pv2[k] - U[k])));
      gp[k] += static_cast<T>(static_cast<double>(slope) * s * (1.0 - s)) * go[k];
    }
  };
  Node<T> node = tp->push(std::move(out), p.requires_grad(), back);
  return StepDraw<T>{node, std::move(out_mask), retries, fallback};
}

// ---------------------------------------------------------------------------
// mask application on the tape (gradient reaches the mask through the STE)
// ---------------------------------------------------------------------------

// y [2,H,W] elementwise-multiplied by a mask index vector (length W in line
// mode, H*W in point mode).
template <class T>
Node<T> apply_mask_node(Node<T> y, Node<T> m, MaskMode mode) {
  detail::check_same_tape(y, m);
  Tape<T>* tp = y.tape;
  const Tensor<T>& yv = y.value();
  const Tensor<T>& mv = m.value();
  if (yv.rank() != 3 || yv.shape[0] != 2) throw ShapeError("apply_mask_node: [2,H,W]");
  const int H = yv.shape[1], W = yv.shape[2];
  const long long plane = static_cast<long long>(H) * W;
  if (mv.numel() != (mode == MaskMode::kLine ? W : H * W))
    throw ShapeError("apply_mask_node: mask extent mismatch");
  Tensor<T> out(yv.shape);
  auto mval = [&](int i, int j) {
    return mode == MaskMode::kLine ? mv[j] : mv[static_cast<long long>(i) * W + j];
  };
  for (int ch = 0; ch < 2; ++ch)
    for (int i = 0; i < H; ++i)
      for (int j = 0; j < W; ++j)
        out.data[ch * plane + static_cast<std::size_t>(i) * W + j] =
            yv.data[ch * plane + static_cast<std::size_t>(i) * W + j] * mval(i, j);
  const int yid = y.id, mid = m.id, oid = tp->next_id();
  auto back = [tp, yid, mid, oid, H, W, plane, mode]() {
    const Tensor<T>& go = tp->out_grad(oid);
    const Tensor<T>& yv2 = tp->value(yid);
    const Tensor<T>& mv2 = tp->value(mid);
    if (tp->requires_grad(yid)) {
      Tensor<T>& gy = tp->grad_buf(yid);
      for (int ch = 0; ch < 2; ++ch)
        for (int i = 0; i < H; ++i)
          for (int j = 0; j < W; ++j) {
            const long long o = ch * plane + static_cast<long long>(i) * W + j;
            gy[o] += go[o] * (mode == MaskMode::kLine ? mv2[j]
                                                      : mv2[static_cast<long long>(i) * W + j]);
          }
    }
    if (tp->requires_grad(mid)) {
      Tensor<T>& gm = tp->grad_buf(mid);
      for (int ch = 0; ch < 2; ++ch)
        for (int i = 0; i < H; ++i)
          for (int j = 0; j < W; ++j) {
            const long long o = ch * plane + static_cast<long long>(i) * W + j;
            gm[mode == MaskMode::kLine ? j : static_cast<long long>(i) * W + j] +=
                go[o] * yv2[o];
          }
    }
  };
  return tp->push(std::move(out), y.requires_grad() || m.requires_grad(), back);
}

// |.| of a 2-channel grid, smoothed at zero: sqrt(re^2 + im^2 + eps)
template <class T>
Node<T> magnitude(Node<T> g, T eps = T(1e-12)) {
  const Tensor<T>& gv = g.value();
  if (gv.rank() != 3 || gv.shape[0] != 2) throw ShapeError("magnitude: [2,H,W] required");
  const int H = gv.shape[1], W = gv.shape[2];
  Node<T> re = reshape(channel_slice(g, 0, 1), {H, W});
  Node<T> im = reshape(channel_slice(g, 1, 1), {H, W});
  return sqrt_eps(add(mul(re, re), mul(im, im)), eps);
}

// ---------------------------------------------------------------------------
// policy networks
// ---------------------------------------------------------------------------

struct SamplerConfig {
  MaskMode mode = MaskMode::kPoint;
  int height = 64;
  int width = 64;
  int mlp_hidden = 256;   // line sampler
  int unet_base = 16;     // point sampler
  double ste_slope = 5.0;
};

inline constexpr int kLineMlpLayers = 5;

template <class T>
void sampler_init(Params<T>& params, const SamplerConfig& cfg, Rng& rng) {
  if (cfg.mode == MaskMode::kLine) {
    const int n = cfg.width;
    std::vector<int> dims = {3 * n, cfg.mlp_hidden, cfg.mlp_hidden, cfg.mlp_hidden,
                             cfg.mlp_hidden, n};
    mlp_init(params, "sampler.", dims, rng);
  } else {
    unet_init(params, "sampler.", UNetSpec{5, 1, cfg.unet_base}, rng);
  }
}

// Raw (pre-normalization) scores over the K sampling indices.
// Line mode: per-column magnitude means of y_hat and y_tilde plus the line
// mask feed a 5-layer MLP. Point mode: [Re y_hat, Im y_hat, Re y_tilde,
// Im y_tilde, M] feed the 8-block UNet.
template <class T>
Node<T> sampler_forward(const ParamLeaves<T>& pl, const SamplerConfig& cfg,
                        Node<T> y_hat, Node<T> y_tilde, const Mask& prev) {
  Tape<T>* tp = y_hat.tape;
  const Tensor<T>& yv = y_hat.value();
  if (yv.rank() != 3 || yv.shape[0] != 2 || yv.shape[1] != cfg.height ||
      yv.shape[2] != cfg.width)
    throw ShapeError("sampler_forward: extent mismatch");
  if (prev.height != cfg.height || prev.width != cfg.width || prev.mode != cfg.mode)
    throw ShapeError("sampler_forward: mask extent mismatch");

  if (cfg.mode == MaskMode::kLine) {
    Node<T> f1 = mean_rows(magnitude(y_hat));
    Node<T> f2 = mean_rows(magnitude(y_tilde));
    Node<T> f3 = tp->constant(prev.index_vector<T>());
    return mlp_forward(pl, "sampler.", kLineMlpLayers, concat(concat(f1, f2), f3));
  }
  Node<T> m2d = tp->constant([&] {
    Tensor<T> t = prev.realization<T>();
    t.shape = {1, cfg.height, cfg.width};
    return t;
  }());
  Node<T> stacked = concat_channels(concat_channels(y_hat, y_tilde), m2d);
  Node<T> scores = unet_forward(pl, "sampler.", stacked);
  return reshape(scores, {cfg.height * cfg.width});
}

}  // namespace seqmri
