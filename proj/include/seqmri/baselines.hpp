#pragma once

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "seqmri/phantom.hpp"
#include "seqmri/pipeline.hpp"

namespace seqmri {

// ---------------------------------------------------------------------------
// baseline mask policies
// ---------------------------------------------------------------------------

// Low-frequency pre-selection plus uniform sampling without replacement.
inline Mask random_mask(const AccelSpec& spec, Rng& rng) {
  spec.validate();
  Mask m = low_freq_mask(spec);
  const int extra = spec.total_budget() - spec.low_freq_budget();
  std::vector<int> free;
  for (int k = 0; k < spec.index_count(); ++k)
    if (!m.bits[k]) free.push_back(k);
  if (static_cast<int>(free.size()) < extra)
    throw ShapeError("random_mask: budget infeasible");
  for (int s = 0; s < extra; ++s) {
    const auto j = s + static_cast<int>(rng.below(free.size() - s));
    std::swap(free[s], free[j]);
    m.bits[free[s]] = 1;
  }
  return m;
}

// Equidistant columns anchored at DC (line mode only); the central
// pre-selection is included and collisions shift outward.
inline Mask equispaced_mask(const AccelSpec& spec) {
  spec.validate();
  if (spec.mode != MaskMode::kLine) throw ShapeError("equispaced_mask: line mode only");
  Mask m = low_freq_mask(spec);
  const int W = spec.width, B = spec.total_budget(), dc = W / 2;
  const int stride = std::max(1, W / B);
  long long placed = m.sample_count();
  auto place = [&](int j, int dir) {
    while (j >= 0 && j < W && m.bits[j]) j += dir;  // shift outward past collisions
    if (j >= 0 && j < W) {
      m.bits[j] = 1;
      ++placed;
    }
  };
  for (int k = 0; placed < B && k <= W / stride + 1; ++k) {
    if (k == 0) {
      place(dc, 1);
      continue;
    }
    if (placed < B) place(dc + k * stride, 1);
    if (placed < B) place(dc - k * stride, -1);
  }
  // boundary clipping can leave a shortfall; fill from the center outward
  const auto order = center_order(spec.mode, spec.height, spec.width);
  for (std::size_t i = 0; placed < B && i < order.size(); ++i)
    if (!m.bits[order[i]]) {
      m.bits[order[i]] = 1;
      ++placed;
    }
  return m;
}

// Top-B indices by average training-set power |F(x)|^2, low-freq forced first.
template <class T>
Mask spectrum_mask(const std::vector<Tensor<T>>& train_images, const AccelSpec& spec) {
  spec.validate();
  if (train_images.empty()) throw ShapeError("spectrum_mask: empty training set");
  Tensor<double> avg({spec.height, spec.width});
  for (const auto& img : train_images) {
    auto p = power_spectrum(img);
    for (long long i = 0; i < avg.numel(); ++i) avg[i] += p[i];
  }
  Mask m = low_freq_mask(spec);
  const int K = spec.index_count();
  std::vector<double> score(K, 0.0);
  if (spec.mode == MaskMode::kLine) {
    for (int i = 0; i < spec.height; ++i)
      for (int j = 0; j < spec.width; ++j) score[j] += avg.at(i, j);
  } else {
    for (int k = 0; k < K; ++k) score[k] = avg[k];
  }
  std::vector<int> idx;
  for (int k = 0; k < K; ++k)
    if (!m.bits[k]) idx.push_back(k);
  std::sort(idx.begin(), idx.end(),
            [&](int a, int b) { return score[a] != score[b] ? score[a] > score[b] : a < b; });
  const int extra = spec.total_budget() - spec.low_freq_budget();
  for (int s = 0; s < extra; ++s) m.bits[idx[s]] = 1;
  return m;
}

// ---------------------------------------------------------------------------
// static-mask reconstruction training (Random/equispaced/spectrum baselines and
// the co-design-off pre-training arm)
// ---------------------------------------------------------------------------

using MaskSampler = std::function<Mask(Rng&)>;

template <class T>
Node<T> static_mask_loss(Tape<T>& tape, const ParamLeaves<T>& pl, const ReconConfig& rcfg,
                         const Tensor<T>& x, const Mask& mask) {
  Node<T> y_hat = tape.constant(apply_mask(to_kspace(x), mask));
  Node<T> x_tilde = reconstruct(pl, rcfg, ifft2c(y_hat));
  EpisodeTrace<T> trace;
  trace.x_tilde.push_back(x_tilde);
  return episode_loss(trace, x);
}

template <class T>
std::vector<EvalRecord> evaluate_static(const Params<T>& params, const TrainConfig& cfg,
                                        const std::vector<Tensor<T>>& images,
                                        const MaskSampler& masks, std::uint64_t eval_seed) {
  const ReconConfig rcfg = cfg.recon_config();
  std::vector<EvalRecord> out;
  out.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    Rng base(eval_seed);
    Rng ep = base.fork(i + 1);
    const Mask m = masks(ep);
    Tape<T> tape;
    auto pl = ParamLeaves<T>::make(tape, params, false);
    Node<T> y_hat = tape.constant(apply_mask(to_kspace(images[i]), m));
    const Tensor<T>& recon = reconstruct(pl, rcfg, ifft2c(y_hat)).value();
    T peak = images[i].max_abs();
    if (!(peak > T(0))) peak = T(1);
    EvalRecord r;
    r.ssim = ssim_value(recon, images[i], 7, 0.01, 0.03, static_cast<double>(peak));
    r.psnr = psnr_value(recon, images[i], static_cast<double>(peak));
    r.accel = acceleration(m);
    out.push_back(r);
  }
  return out;
}

// Reconstructor-only training against masks drawn per episode.
template <class T>
TrainResult<T> recon_only_train(const TrainConfig& cfg,
                                const std::vector<Tensor<T>>& train_images,
                                const std::vector<Tensor<T>>& val_images,
                                const MaskSampler& masks) {
  Params<T> init;
  Rng init_rng = Rng(cfg.seed).fork(1);
  recon_init(init, cfg.recon_config(), init_rng);
  const ReconConfig rcfg = cfg.recon_config();
  TrainHooks<T> hooks;
  hooks.loss = [rcfg, &masks](Tape<T>& tape, const ParamLeaves<T>& pl, const Tensor<T>& x,
                              Rng& ep) {
    return static_mask_loss(tape, pl, rcfg, x, masks(ep));
  };
  hooks.val_metric = [&cfg, &masks](const Params<T>& p, const std::vector<Tensor<T>>& imgs,
                                    std::uint64_t seed) {
    auto recs = evaluate_static(p, cfg, imgs, masks, seed);
    double s = 0;
    for (const auto& r : recs) s += r.ssim;
    return recs.empty() ? 0.0 : s / static_cast<double>(recs.size());
  };
  return train_loop(cfg, init, train_images, val_images, hooks);
}

// ---------------------------------------------------------------------------
// LOUPE-style static heatmap: a free score vector over K indices trained
// jointly with the reconstructor; single-shot mask, no policy network.
// ---------------------------------------------------------------------------

inline const char* kLoupeScoresName = "loupe.scores";

template <class T>
Node<T> loupe_episode_loss(Tape<T>& tape, const ParamLeaves<T>& pl, const TrainConfig& cfg,
                           const Tensor<T>& x, Rng& rng, Mask* mask_out = nullptr,
                           bool soft = false, Tensor<T>* recon_out = nullptr) {
  const AccelSpec spec = cfg.accel_spec();
  const Mask lf = low_freq_mask(spec);
  const int budget = spec.total_budget() - spec.low_freq_budget();
  long long unacq = spec.index_count() - lf.sample_count();
  T target = static_cast<T>(static_cast<double>(budget) / static_cast<double>(unacq));
  target = std::min(target, T(1) - T(1e-6));
  Node<T> p = mask_acquired(normalize_heatmap(pl.at(kLoupeScoresName), target), lf);
  StepDraw<T> draw = binarize(p, lf, budget, rng, static_cast<T>(cfg.ste_slope), soft);
  Node<T> y = tape.constant(to_kspace(x));
  Node<T> y_hat = apply_mask_node(y, draw.mask_node, cfg.mode);
  Node<T> x_tilde = reconstruct(pl, cfg.recon_config(), ifft2c(y_hat));
  if (mask_out) *mask_out = draw.mask;
  if (recon_out) *recon_out = x_tilde.value();
  EpisodeTrace<T> trace;
  trace.x_tilde.push_back(x_tilde);
  return episode_loss(trace, x);
}

template <class T>
std::vector<EvalRecord> evaluate_loupe(const Params<T>& params, const TrainConfig& cfg,
                                       const std::vector<Tensor<T>>& images,
                                       std::uint64_t eval_seed) {
  std::vector<EvalRecord> out;
  out.reserve(images.size());
  const double B = static_cast<double>(cfg.accel_spec().total_budget());
  for (std::size_t i = 0; i < images.size(); ++i) {
    Tape<T> tape;
    auto pl = ParamLeaves<T>::make(tape, params, false);
    Rng base(eval_seed);
    Rng ep = base.fork(i + 1);
    Mask m;
    Tensor<T> recon;
    Node<T> loss = loupe_episode_loss(tape, pl, cfg, images[i], ep, &m, false, &recon);
    const double a = acceleration(m);
    if (a < cfg.accel * (1.0 - 2.0 / B) || a > cfg.accel * (1.0 + 2.0 / B))
      throw NumericError("evaluate_loupe: acceleration audit failed");
    T peak = images[i].max_abs();
    if (!(peak > T(0))) peak = T(1);
    EvalRecord r;
    r.ssim = 1.0 - static_cast<double>(loss.value()[0]);
    r.psnr = psnr_value(recon, images[i], static_cast<double>(peak));
    r.accel = a;
    out.push_back(r);
  }
  return out;
}

template <class T>
TrainResult<T> loupe_style_train(const TrainConfig& cfg,
                                 const std::vector<Tensor<T>>& train_images,
                                 const std::vector<Tensor<T>>& val_images) {
  Params<T> init;
  Rng init_rng = Rng(cfg.seed).fork(1);
  recon_init(init, cfg.recon_config(), init_rng);
  const int K = cfg.accel_spec().index_count();
  init[kLoupeScoresName] = init_uniform<T>({K}, K, init_rng);
  TrainHooks<T> hooks;
  hooks.loss = [&cfg](Tape<T>& tape, const ParamLeaves<T>& pl, const Tensor<T>& x,
                      Rng& ep) { return loupe_episode_loss(tape, pl, cfg, x, ep); };
  hooks.val_metric = [&cfg](const Params<T>& p, const std::vector<Tensor<T>>& imgs,
                            std::uint64_t seed) {
    auto recs = evaluate_loupe(p, cfg, imgs, seed);
    double s = 0;
    for (const auto& r : recs) s += r.ssim;
    return recs.empty() ? 0.0 : s / static_cast<double>(recs.size());
  };
  return train_loop(cfg, init, train_images, val_images, hooks);
}

// ---------------------------------------------------------------------------
// non-sequential variant: same architecture, policy inputs replaced by
// fixed-seed noise, mask drawn in one shot
// ---------------------------------------------------------------------------

template <class T>
Node<T> nonseq_episode_loss(Tape<T>& tape, const ParamLeaves<T>& pl, const TrainConfig& cfg,
                            const Tensor<T>& x, Rng& rng, Mask* mask_out = nullptr,
                            Tensor<T>* recon_out = nullptr) {
  const AccelSpec spec = cfg.accel_spec();
  const SamplerConfig scfg = cfg.sampler_config();
  const Mask lf = low_freq_mask(spec);
  // fixed-seed noise: identical tensors on every episode (no measurement input)
  Rng noise_rng(cfg.seed ^ 0x6e6f697365ull);
  Tensor<T> noise({2, cfg.extent, cfg.extent});
  for (auto& v : noise.data) v = static_cast<T>(noise_rng.normal());
  Tensor<T> noise2({2, cfg.extent, cfg.extent});
  for (auto& v : noise2.data) v = static_cast<T>(noise_rng.normal());
  Node<T> scores =
      sampler_forward(pl, scfg, tape.constant(noise), tape.constant(noise2), lf);
  const int budget = spec.total_budget() - spec.low_freq_budget();
  long long unacq = spec.index_count() - lf.sample_count();
  T target = static_cast<T>(static_cast<double>(budget) / static_cast<double>(unacq));
  target = std::min(target, T(1) - T(1e-6));
  Node<T> p = mask_acquired(normalize_heatmap(scores, target), lf);
  StepDraw<T> draw = binarize(p, lf, budget, rng, static_cast<T>(cfg.ste_slope));
  Node<T> y = tape.constant(to_kspace(x));
  Node<T> y_hat = apply_mask_node(y, draw.mask_node, cfg.mode);
  Node<T> x_tilde = reconstruct(pl, cfg.recon_config(), ifft2c(y_hat));
  if (mask_out) *mask_out = draw.mask;
  if (recon_out) *recon_out = x_tilde.value();
  EpisodeTrace<T> trace;
  trace.x_tilde.push_back(x_tilde);
  return episode_loss(trace, x);
}

template <class T>
std::vector<EvalRecord> evaluate_nonseq(const Params<T>& params, const TrainConfig& cfg,
                                        const std::vector<Tensor<T>>& images,
                                        std::uint64_t eval_seed) {
  std::vector<EvalRecord> out;
  out.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    Tape<T> tape;
    auto pl = ParamLeaves<T>::make(tape, params, false);
    Rng base(eval_seed);
    Rng ep = base.fork(i + 1);
    Mask m;
    Tensor<T> recon;
    Node<T> loss = nonseq_episode_loss(tape, pl, cfg, images[i], ep, &m, &recon);
    T peak = images[i].max_abs();
    if (!(peak > T(0))) peak = T(1);
    EvalRecord r;
    r.ssim = 1.0 - static_cast<double>(loss.value()[0]);
    r.psnr = psnr_value(recon, images[i], static_cast<double>(peak));
    r.accel = acceleration(m);
    out.push_back(r);
  }
  return out;
}

template <class T>
TrainResult<T> nonseq_variant_train(const TrainConfig& cfg,
                                    const std::vector<Tensor<T>>& train_images,
                                    const std::vector<Tensor<T>>& val_images) {
  Params<T> init;
  Rng init_rng = Rng(cfg.seed).fork(1);
  pipeline_init(init, cfg, init_rng);
  TrainHooks<T> hooks;
  hooks.loss = [&cfg](Tape<T>& tape, const ParamLeaves<T>& pl, const Tensor<T>& x,
                      Rng& ep) { return nonseq_episode_loss(tape, pl, cfg, x, ep); };
  hooks.val_metric = [&cfg](const Params<T>& p, const std::vector<Tensor<T>>& imgs,
                            std::uint64_t seed) {
    auto recs = evaluate_nonseq(p, cfg, imgs, seed);
    double s = 0;
    for (const auto& r : recs) s += r.ssim;
    return recs.empty() ? 0.0 : s / static_cast<double>(recs.size());
  };
  return train_loop(cfg, init, train_images, val_images, hooks);
}

// ---------------------------------------------------------------------------
// paired comparison
// ---------------------------------------------------------------------------

struct ComparisonReport {
  int n = 0;
  double mean_a = 0, std_a = 0;
  double mean_b = 0, std_b = 0;
  double pct_a_gt_b = 0;  // ties split 0.5 to each side
  double t_stat = 0;
  double p_value = 1;
};

namespace detail {

inline void mean_std(const std::vector<double>& v, double& mean, double& sd) {
  const int n = static_cast<int>(v.size());
  mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double acc = 0;
  for (double x : v) acc += (x - mean) * (x - mean);
  sd = n > 1 ? std::sqrt(acc / (n - 1)) : 0.0;
}

inline double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

}  // namespace detail

inline ComparisonReport compare(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty())
    throw ShapeError("compare: paired lists must have equal nonzero length");
  ComparisonReport r;
  r.n = static_cast<int>(a.size());
  detail::mean_std(a, r.mean_a, r.std_a);
  detail::mean_std(b, r.mean_b, r.std_b);
  double wins = 0;
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    d[i] = a[i] - b[i];
    if (a[i] > b[i])
      wins += 1.0;
    else if (a[i] == b[i])
      wins += 0.5;
  }
  r.pct_a_gt_b = 100.0 * wins / static_cast<double>(r.n);
  double dm, dsd;
  detail::mean_std(d, dm, dsd);
  if (dsd == 0.0) {
    r.t_stat = dm == 0.0 ? 0.0 : std::numeric_limits<double>::infinity() * (dm > 0 ? 1 : -1);
    r.p_value = dm == 0.0 ? 1.0 : 0.0;
    return r;
  }
  r.t_stat = dm / (dsd / std::sqrt(static_cast<double>(r.n)));
  if (r.n > 30) {
    r.p_value = 2.0 * detail::normal_sf(std::abs(r.t_stat));
  } else {
    boost::math::students_t dist(static_cast<double>(r.n - 1));
    r.p_value = 2.0 * boost::math::cdf(dist, -std::abs(r.t_stat));
  }
  return r;
}

inline std::string report_to_json(const ComparisonReport& r) {
  std::ostringstream os;
  os.precision(17);
  os << "{\"n\":" << r.n << ",\"mean_a\":" << r.mean_a << ",\"std_a\":" << r.std_a
     << ",\"mean_b\":" << r.mean_b << ",\"std_b\":" << r.std_b
     << ",\"pct_a_gt_b\":" << r.pct_a_gt_b << ",\"t\":" << r.t_stat
     << ",\"p\":" << r.p_value << "}";
  return os.str();
}

// circular correlation of two axial angle lists (period pi): mean resultant
// length of exp(2i(a-b)), in [0,1]; 1 means perfectly locked axes
inline double circular_correlation(const std::vector<double>& a,
                                   const std::vector<double>& b) {
  if (a.size() != b.size() || a.empty())
    throw ShapeError("circular_correlation: length mismatch");
  double c = 0, s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    c += std::cos(2.0 * (a[i] - b[i]));
    s += std::sin(2.0 * (a[i] - b[i]));
  }
  c /= static_cast<double>(a.size());
  s /= static_cast<double>(a.size());
  return std::hypot(c, s);
}

}  // namespace seqmri
