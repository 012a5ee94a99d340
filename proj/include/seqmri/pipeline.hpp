#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "seqmri/adam.hpp"
#include "seqmri/forward_model.hpp"
#include "seqmri/reconstructor.hpp"
#include "seqmri/sampler.hpp"
#include "seqmri/ssim.hpp"

namespace seqmri {

// ---------------------------------------------------------------------------
// episode
// ---------------------------------------------------------------------------

template <class T>
struct EpisodeTrace {
  std::vector<Mask> masks;        // M_0 .. M_T (cumulative)
  std::vector<Node<T>> y_hat;     // masked k-space entering step t = 1..T, plus final
  std::vector<Node<T>> x_hat;     // zero-filled images, same indexing
  std::vector<Node<T>> x_tilde;   // reconstructions; back() is the final x~_T
  int retries = 0;                // binarize redraws summed over steps
  int fallbacks = 0;              // steps that hit the deterministic fallback
};

struct TrainConfig {
  MaskMode mode = MaskMode::kPoint;
  int extent = 64;          // image height = width
  double accel = 4.0;       // alpha
  int steps = 4;            // T
  int epochs = 50;
  double lr = 1e-3;
  int lr_half_every = 10;
  int batch = 8;
  std::uint64_t seed = 0;
  double ste_slope = 5.0;
  int recon_base = 16;      // reconstructor UNet width
  int sampler_base = 16;    // point-sampler UNet width
  int mlp_hidden = 256;     // line-sampler MLP width

  AccelSpec accel_spec() const {
    AccelSpec s;
    s.mode = mode;
    s.height = s.width = extent;
    s.accel = accel;
    s.steps = steps;
    return s;
  }
  SamplerConfig sampler_config() const {
    SamplerConfig s;
    s.mode = mode;
    s.height = s.width = extent;
    s.mlp_hidden = mlp_hidden;
    s.unet_base = sampler_base;
    s.ste_slope = ste_slope;
    return s;
  }
  ReconConfig recon_config() const {
    ReconConfig r;
    r.height = r.width = extent;
    r.unet_base = recon_base;
    return r;
  }
  void validate() const {
    if (extent < 16 || !is_pow2(extent)) throw ShapeError("TrainConfig: extent");
    if (epochs < 1 || lr <= 0 || lr_half_every < 1 || batch < 1 || ste_slope <= 0)
      throw ShapeError("TrainConfig: non-positive field");
    accel_spec().validate();
  }
};

template <class T>
void pipeline_init(Params<T>& params, const TrainConfig& cfg, Rng& rng) {
  sampler_init(params, cfg.sampler_config(), rng);
  recon_init(params, cfg.recon_config(), rng);
}

// One full acquisition episode on the given tape: low-frequency pre-selection,
// T sampling rounds with one shared parameter set, then the final
// reconstruction. `soft` switches binarize to its sigmoid surrogate forward
// (finite-difference checks only).
template <class T>
EpisodeTrace<T> run_episode(Tape<T>& tape, const ParamLeaves<T>& pl, const TrainConfig& cfg,
                            const Tensor<T>& x, Rng& rng, bool soft = false) {
  const AccelSpec spec = cfg.accel_spec();
  spec.validate();
  if (x.rank() != 2 || x.shape[0] != cfg.extent || x.shape[1] != cfg.extent)
    throw ShapeError("run_episode: image extent mismatch");
  const SamplerConfig scfg = cfg.sampler_config();
  const ReconConfig rcfg = cfg.recon_config();
  const int K = spec.index_count();

  EpisodeTrace<T> trace;
  Node<T> y = tape.constant(to_kspace(x));
  trace.masks.push_back(low_freq_mask(spec));
  Node<T> m_node = tape.constant(trace.masks[0].template index_vector<T>());
  Node<T> zeros = tape.constant(Tensor<T>({1, cfg.extent, cfg.extent}));

  for (int t = 1; t <= spec.steps; ++t) {
    const Mask& prev = trace.masks.back();
    Node<T> y_hat = apply_mask_node(y, m_node, cfg.mode);
    Node<T> x_hat = ifft2c(y_hat);
    Node<T> x_tilde = reconstruct(pl, rcfg, x_hat);
    Node<T> y_tilde =
        fft2c(concat_channels(reshape(x_tilde, {1, cfg.extent, cfg.extent}), zeros));
    Node<T> scores = sampler_forward(pl, scfg, y_hat, y_tilde, prev);

    long long unacq = K;
    for (auto b : prev.bits) unacq -= b;
    const int budget = spec.step_budget(t);
    T target = static_cast<T>(static_cast<double>(budget) / static_cast<double>(unacq));
    target = std::min(target, T(1) - T(1e-6));
    Node<T> p = mask_acquired(normalize_heatmap(scores, target), prev);
    StepDraw<T> draw =
        binarize(p, prev, budget, rng, static_cast<T>(cfg.ste_slope), soft);

    trace.y_hat.push_back(y_hat);
    trace.x_hat.push_back(x_hat);
    trace.x_tilde.push_back(x_tilde);
    trace.masks.push_back(soft ? prev : draw.mask);
    trace.retries += draw.retries;
    trace.fallbacks += draw.fallback ? 1 : 0;
    m_node = draw.mask_node;
  }

  Node<T> y_hat = apply_mask_node(y, m_node, cfg.mode);
  Node<T> x_hat = ifft2c(y_hat);
  trace.y_hat.push_back(y_hat);
  trace.x_hat.push_back(x_hat);
  trace.x_tilde.push_back(reconstruct(pl, rcfg, x_hat));
  return trace;
}

// 1 - SSIM(x~_T, x); the data range follows the ground-truth peak.
template <class T>
Node<T> episode_loss(const EpisodeTrace<T>& trace, const Tensor<T>& x) {
  if (trace.x_tilde.empty()) throw ShapeError("episode_loss: incomplete trace");
  T peak = x.max_abs();
  if (!(peak > T(0))) peak = T(1);
  Node<T> s = ssim(trace.x_tilde.back(), x, 7, T(0.01), T(0.03), peak);
  return add_scalar(neg(s), T(1));
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

struct TrainLogEntry {
  int epoch = 0;
  double train_loss = 0;
  double val_ssim = 0;
  double lr = 0;
};

template <class T>
struct TrainResult {
  Params<T> params;       // final epoch
  Params<T> best_params;  // best validation SSIM
  AdamState<T> adam;
  std::vector<TrainLogEntry> log;
  double best_val = -2.0;
  int best_epoch = -1;
};

struct EvalRecord {
  double ssim = 0;
  double psnr = 0;
  double accel = 0;
};

// Deterministic per-image evaluation: the draw RNG is a pure function of
// (seed, image index). Audits the realized acceleration of every final mask.
template <class T>
std::vector<EvalRecord> evaluate(const Params<T>& params, const TrainConfig& cfg,
                                 const std::vector<Tensor<T>>& images,
                                 std::uint64_t eval_seed) {
  const AccelSpec spec = cfg.accel_spec();
  const double B = static_cast<double>(spec.total_budget());
  std::vector<EvalRecord> out;
  out.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    Tape<T> tape;
    auto pl = ParamLeaves<T>::make(tape, params, false);
    Rng rng(eval_seed);
    Rng ep = rng.fork(static_cast<std::uint64_t>(i) + 1);
    auto trace = run_episode(tape, pl, cfg, images[i], ep);
    const double a = acceleration(trace.masks.back());
    if (a < cfg.accel * (1.0 - 2.0 / B) || a > cfg.accel * (1.0 + 2.0 / B))
      throw NumericError("evaluate: acceleration audit failed");
    const Tensor<T>& recon = trace.x_tilde.back().value();
    T peak = images[i].max_abs();
    if (!(peak > T(0))) peak = T(1);
    EvalRecord r;
    r.ssim = ssim_value(recon, images[i], 7, 0.01, 0.03, static_cast<double>(peak));
    r.psnr = psnr_value(recon, images[i], static_cast<double>(peak));
    r.accel = a;
    out.push_back(r);
  }
  return out;
}

template <class T>
double mean_ssim(const Params<T>& params, const TrainConfig& cfg,
                 const std::vector<Tensor<T>>& images, std::uint64_t eval_seed) {
  auto recs = evaluate(params, cfg, images, eval_seed);
  double s = 0;
  for (const auto& r : recs) s += r.ssim;
  return recs.empty() ? 0.0 : s / static_cast<double>(recs.size());
}

inline double lr_at_epoch(double lr0, int epoch, int half_every) {
  return lr0 * std::pow(0.5, epoch / half_every);
}

// Customization points shared by the main trainer and the baseline trainers.
template <class T>
struct TrainHooks {
  // builds one episode on the tape and returns its loss node
  std::function<Node<T>(Tape<T>&, const ParamLeaves<T>&, const Tensor<T>&, Rng&)> loss;
  // mean validation SSIM under a fixed seed
  std::function<double(const Params<T>&, const std::vector<Tensor<T>>&, std::uint64_t)>
      val_metric;
  std::function<bool(const std::string&)> trainable;  // empty = all trainable
};

// Adam over shuffled minibatches; one episode per image, gradients averaged
// within a batch. Keeps the best-validation parameter set. Divergence aborts.
template <class T>
TrainResult<T> train_loop(const TrainConfig& cfg, const Params<T>& init,
                          const std::vector<Tensor<T>>& train_images,
                          const std::vector<Tensor<T>>& val_images,
                          const TrainHooks<T>& hooks) {
  cfg.validate();
  if (train_images.empty()) throw ShapeError("train: empty training set");
  TrainResult<T> result;
  result.params = init;
  Rng root(cfg.seed);
  Rng seed_rng = root.fork(2);
  const std::uint64_t val_seed = seed_rng.next_u64();

  std::vector<std::size_t> order(train_images.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg.lr, epoch, cfg.lr_half_every);
    Rng shuffle_rng = root.fork(100 + static_cast<std::uint64_t>(epoch));
    for (std::size_t k = order.size(); k > 1; --k)
      std::swap(order[k - 1], order[shuffle_rng.below(k)]);
    Rng draw_rng = root.fork(10000 + static_cast<std::uint64_t>(epoch));

    double epoch_loss = 0;
    std::size_t done = 0;
    while (done < order.size()) {
      const std::size_t bsz =
          std::min<std::size_t>(cfg.batch, order.size() - done);
      std::map<std::string, Tensor<T>> acc;
      for (std::size_t b = 0; b < bsz; ++b) {
        const Tensor<T>& x = train_images[order[done + b]];
        Tape<T> tape;
        auto pl = ParamLeaves<T>::make(tape, result.params, true);
        Rng ep = draw_rng.fork(done + b + 1);
        auto loss = hooks.loss(tape, pl, x, ep);
        const double lv = static_cast<double>(loss.value()[0]);
        if (!std::isfinite(lv))
          throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch));
        epoch_loss += lv;
        tape.backward(loss);
        for (auto& [name, g] : pl.grads()) {
          auto it = acc.find(name);
          if (it == acc.end())
            acc.emplace(name, std::move(g));
          else
            for (long long i = 0; i < g.numel(); ++i) it->second[i] += g[i];
        }
      }
      const T inv = T(1) / static_cast<T>(bsz);
      for (auto& [name, g] : acc) {
        const T scale = (hooks.trainable && !hooks.trainable(name)) ? T(0) : inv;
        for (long long i = 0; i < g.numel(); ++i) g[i] *= scale;
        if (!g.all_finite())
          throw NumericError("train: non-finite gradient in " + name);
      }
      result.adam.lr = static_cast<T>(lr);
      adam_step(result.params, acc, result.adam);
      done += bsz;
    }
    epoch_loss /= static_cast<double>(order.size());

    const double val =
        val_images.empty() ? 0.0 : hooks.val_metric(result.params, val_images, val_seed);
    result.log.push_back(TrainLogEntry{epoch, epoch_loss, val, lr});
    if (val_images.empty() || val > result.best_val) {
      result.best_val = val_images.empty() ? -epoch_loss : val;
      result.best_epoch = epoch;
      result.best_params = result.params;
    }
  }
  if (result.best_epoch < 0) {
    result.best_params = result.params;
    result.best_epoch = cfg.epochs - 1;
  }
  return result;
}

// The main sequential co-design trainer.
template <class T>
TrainResult<T> train(const TrainConfig& cfg, const std::vector<Tensor<T>>& train_images,
                     const std::vector<Tensor<T>>& val_images,
                     const Params<T>* init_override = nullptr,
                     const std::function<bool(const std::string&)>& trainable = {}) {
  Params<T> init;
  if (init_override) {
    init = *init_override;
  } else {
    Rng init_rng = Rng(cfg.seed).fork(1);
    pipeline_init(init, cfg, init_rng);
  }
  TrainHooks<T> hooks;
  hooks.loss = [&cfg](Tape<T>& tape, const ParamLeaves<T>& pl, const Tensor<T>& x,
                      Rng& ep) {
    auto trace = run_episode(tape, pl, cfg, x, ep);
    return episode_loss(trace, x);
  };
  hooks.val_metric = [&cfg](const Params<T>& p, const std::vector<Tensor<T>>& imgs,
                            std::uint64_t seed) { return mean_ssim(p, cfg, imgs, seed); };
  hooks.trainable = trainable;
  return train_loop(cfg, init, train_images, val_images, hooks);
}

inline void write_log_jsonl(const std::string& path, const std::vector<TrainLogEntry>& log) {
  std::ofstream os(path);
  if (!os) throw IoError("write_log_jsonl: cannot open " + path);
  os.precision(17);
  for (const auto& e : log)
    os << "{\"epoch\":" << e.epoch << ",\"train_loss\":" << e.train_loss
       << ",\"val_ssim\":" << e.val_ssim << ",\"lr\":" << e.lr << "}\n";
}

}  // namespace seqmri
