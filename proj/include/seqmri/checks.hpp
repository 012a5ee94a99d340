#pragma once

// Finite-difference gradient suite shared by the CLI `gradcheck` subcommand
// and the acceptance harness: every differentiable operator plus full 16x16
// end-to-end episodes over several seeds.

#include <string>
#include <vector>

#include "seqmri/gradcheck.hpp"
#include "seqmri/pipeline.hpp"

namespace seqmri {

struct GradCheckRow {
  std::string name;
  double err;
};

namespace detail {

inline Tensor<double> rand_tensor(std::vector<int> shape, Rng& rng, double lo = -1,
                                  double hi = 1) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace detail

// Runs the full suite and returns one row per check; pass threshold is 1e-4.
inline std::vector<GradCheckRow> gradcheck_table() {
  using detail::rand_tensor;
  std::vector<GradCheckRow> rows;
  Rng rng(12345);

  auto scalar_of = [](Node<double> n) { return mean(square(n)); };
  auto run = [&](const std::string& name, const CheckedFn& fn,
                 std::vector<Tensor<double>> inputs) {
    // Near a ReLU-style kink the central-difference truncation error is O(1)
    // at fixed step but vanishes as the step shrinks, while a genuine gradient
    // bug stays put; retry with smaller steps before declaring a mismatch.
    double err = grad_check(fn, inputs);
    for (double eps : {1e-6, 1e-7}) {
      if (err < 1e-4) break;
      err = std::min(err, grad_check(fn, inputs, eps));
    }
    rows.push_back({name, err});
  };

  run("elementwise-chain",
      [&](const std::vector<Tensor<double>>& in, std::vector<Tensor<double>>* g) {
        Tape<double> tp;
        auto a = tp.leaf(in[0], true);
        auto b = tp.leaf(in[1], true);
        auto out = sum(mul(sigmoid(add(a, b)), softplus(sub(a, b))));
        if (g) {
          tp.backward(out);
          *g = {tp.grad(a), tp.grad(b)};
        }
        return out.value()[0];
      },
      {rand_tensor({6}, rng), rand_tensor({6}, rng)});

  run("linear",
      [&](const std::vector<Tensor<double>>& in, std::vector<Tensor<double>>* g) {
        Tape<double> tp;
        auto x = tp.leaf(in[0], true);
        auto w = tp.leaf(in[1], true);
        auto b = tp.leaf(in[2], true);
        auto out = scalar_of(linear(x, w, b));
        if (g) {
          tp.backward(out);
          *g = {tp.grad(x), tp.grad(w), tp.grad(b)};
        }
        return out.value()[0];
      },
      {rand_tensor({5}, rng), rand_tensor({5, 4}, rng), rand_tensor({4}, rng)});

  run("conv2d",
      [&](const std::vector<Tensor<double>>& in, std::vector<Tensor<double>>* g) {
        Tape<double> tp;
        auto x = tp.leaf(in[0], true);
        auto k = tp.leaf(in[1], true);
        auto out = scalar_of(conv2d(x, k, 1, 1));
        if (g) {
          tp.backward(out);
          *g = {tp.grad(x), tp.grad(k)};
        }
        return out.value()[0];
      },
      {rand_tensor({2, 6, 6}, rng), rand_tensor({3, 2, 3, 3}, rng)});

  run("instance-norm",
      [&](const std::vector<Tensor<double>>& in, std::vector<Tensor<double>>* g) {
        Tape<double> tp;
        auto x = tp.leaf(in[0], true);
        auto out = scalar_of(instance_norm(x));
        if (g) {
          tp.backward(out);
          *g = {tp.grad(x)};
        }
        return out.value()[0];
      },
      {rand_tensor({2, 5, 5}, rng)});

  run("fft-roundtrip",
      [&](const std::vector<Tensor<double>>& in, std::vector<Tensor<double>>* g) {
        Tape<double> tp;
        auto x = tp.leaf(in[0], true);
        auto out = scalar_of(ifft2c(fft2c(x)));
        if (g) {
          tp.backward(out);
          *g = {tp.grad(x)};
        }
        return out.value()[0];
      },
      {rand_tensor({2, 8, 8}, rng)});

  {
    auto ref = rand_tensor({10, 10}, rng, 0, 1);
    run("ssim",
        [&](const std::vector<Tensor<double>>& in, std::vector<Tensor<double>>* g) {
          Tape<double> tp;
          auto x = tp.leaf(in[0], true);
          auto out = ssim(x, ref);
          if (g) {
            tp.backward(out);
            *g = {tp.grad(x)};
          }
          return out.value()[0];
        },
        {rand_tensor({10, 10}, rng, 0, 1)});
  }

  run("normalize-heatmap",
      [&](const std::vector<Tensor<double>>& in, std::vector<Tensor<double>>* g) {
        Tape<double> tp;
        auto x = tp.leaf(in[0], true);
        auto out = sum(square(normalize_heatmap(x, 0.3)));
        if (g) {
          tp.backward(out);
          *g = {tp.grad(x)};
        }
        return out.value()[0];
      },
      {rand_tensor({12}, rng, -2, 2)});

  {
    Mask prev = Mask::empty(MaskMode::kPoint, 2, 4);
    prev.bits[3] = 1;
    run("binarize-surrogate",
        [&](const std::vector<Tensor<double>>& in, std::vector<Tensor<double>>* g) {
          Tape<double> tp;
          auto p = tp.leaf(in[0], true);
          Rng draw(777);
          auto d = binarize(p, prev, 3, draw, 5.0, /*soft=*/true);
          auto out = sum(square(d.mask_node));
          if (g) {
            tp.backward(out);
            *g = {tp.grad(p)};
          }
          return out.value()[0];
        },
        {rand_tensor({8}, rng, 0.2, 0.8)});
  }

  run("apply-mask",
      [&](const std::vector<Tensor<double>>& in, std::vector<Tensor<double>>* g) {
        Tape<double> tp;
        auto y = tp.leaf(in[0], true);
        auto m = tp.leaf(in[1], true);
        auto out = scalar_of(apply_mask_node(y, m, MaskMode::kPoint));
        if (g) {
          tp.backward(out);
          *g = {tp.grad(y), tp.grad(m)};
        }
        return out.value()[0];
      },
      {rand_tensor({2, 4, 4}, rng), rand_tensor({16}, rng, 0, 1)});

  {
    Params<double> params;
    Rng prng(5);
    unet_init(params, "u.", UNetSpec{2, 1, 1}, prng);
    run("unet",
        [&](const std::vector<Tensor<double>>& in, std::vector<Tensor<double>>* g) {
          Params<double> p = params;
          p["u.out.b"] = in[1];
          Tape<double> tp;
          auto pl = ParamLeaves<double>::make(tp, p, true);
          auto x = tp.leaf(in[0], true);
          auto out = scalar_of(unet_forward(pl, "u.", x));
          if (g) {
            tp.backward(out);
            *g = {tp.grad(x), tp.grad(pl.at("u.out.b"))};
          }
          return out.value()[0];
        },
        {rand_tensor({2, 16, 16}, rng), params.values.at("u.out.b")});
  }

  {
    // full soft episode at 16x16 over several seeds (end-to-end check)
    TrainConfig cfg;
    cfg.mode = MaskMode::kPoint;
    cfg.extent = 16;
    cfg.steps = 1;
    cfg.recon_base = 1;
    cfg.sampler_base = 1;
    for (std::uint64_t s = 1; s <= 5; ++s) {
      Params<double> params;
      Rng prng(s);
      pipeline_init(params, cfg, prng);
      auto x = rand_tensor({16, 16}, rng, 0, 1);
      run("episode-seed-" + std::to_string(s),
          [&](const std::vector<Tensor<double>>& in, std::vector<Tensor<double>>* g) {
            Params<double> p = params;
            p["recon.out.b"] = in[0];
            p["sampler.out.b"] = in[1];
            Tape<double> tp;
            auto pl = ParamLeaves<double>::make(tp, p, true);
            Rng ep(4000 + s);
            auto trace = run_episode(tp, pl, cfg, x, ep, /*soft=*/true);
            auto out = episode_loss(trace, x);
            if (g) {
              tp.backward(out);
              *g = {tp.grad(pl.at("recon.out.b")), tp.grad(pl.at("sampler.out.b"))};
            }
            return out.value()[0];
          },
          {params.values.at("recon.out.b"), params.values.at("sampler.out.b")});
    }
  }

  return rows;
}

}  // namespace seqmri
