#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "seqmri/gradcheck.hpp"
#include "seqmri/reconstructor.hpp"

using namespace seqmri;

namespace {
Tensor<double> random_grid(int n, Rng& rng, double lo = -1, double hi = 1) {
  Tensor<double> t({2, n, n});
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}
}  // namespace

TEST_CASE("magnitude_quantile matches a sorted-magnitude oracle") {
  Rng rng(5);
  auto g = random_grid(8, rng);
  std::vector<double> mags;
  for (int k = 0; k < 64; ++k) mags.push_back(std::hypot(g[k], g[64 + k]));
  std::sort(mags.begin(), mags.end());
  for (double q : {0.0, 0.5, 0.99, 1.0}) {
    Tape<double> tape;
    auto s = magnitude_quantile(tape.leaf(g, false), q);
    const auto k = static_cast<std::size_t>(q * 63.0);
    CHECK(s.value()[0] == doctest::Approx(mags[k]).epsilon(1e-12));
  }
}

TEST_CASE("magnitude_quantile gradient passes a finite-difference check") {
  Rng rng(7);
  auto fn = [](const std::vector<Tensor<double>>& in,
               std::vector<Tensor<double>>* grads) -> double {
    Tape<double> tape;
    auto g = tape.leaf(in[0], true);
    auto s = magnitude_quantile(g, 0.75);
    if (grads) {
      tape.backward(s);
      *grads = {tape.grad(g)};
    }
    return s.value()[0];
  };
  CHECK(grad_check(fn, {random_grid(4, rng)}) < 1e-6);
}

TEST_CASE("reconstruct maps a complex grid to a real image of the same extent") {
  Rng rng(11);
  ReconConfig cfg;
  cfg.height = cfg.width = 16;
  cfg.unet_base = 2;
  Params<double> params;
  recon_init(params, cfg, rng);
  Tape<double> tape;
  auto pl = ParamLeaves<double>::make(tape, params, true);
  auto out = reconstruct(pl, cfg, tape.leaf(random_grid(16, rng), false));
  CHECK(out.value().shape == std::vector<int>{16, 16});
  CHECK(out.value().all_finite());
  // gradients reach every parameter group
  tape.backward(mean(square(out)));
  int live = 0, total = 0;
  for (const auto& [name, g] : pl.grads()) {
    ++total;
    if (g.max_abs() > 0) ++live;
  }
  CHECK(total > 0);
  CHECK(live == total);
}

TEST_CASE("reconstruct normalization makes the net see a unit-scale input") {
  Rng rng(13);
  ReconConfig cfg;
  cfg.height = cfg.width = 16;
  cfg.unet_base = 2;
  Params<double> params;
  recon_init(params, cfg, rng);
  auto g = random_grid(16, rng);

  auto run = [&](const Tensor<double>& in) {
    Tape<double> tape;
    auto pl = ParamLeaves<double>::make(tape, params, false);
    return reconstruct(pl, cfg, tape.leaf(in, false)).value();
  };
  auto base = run(g);
  Tensor<double> scaled = g;
  for (auto& v : scaled.data) v *= 1000.0;
  auto big = run(scaled);
  // with quantile normalization the output scales linearly with the input
  double worst = 0;
  for (long long i = 0; i < base.numel(); ++i)
    worst = std::max(worst, std::abs(big[i] - 1000.0 * base[i]));
  CHECK(worst < 1e-6 * 1000.0);
}

TEST_CASE("reconstruct survives an all-zero input without dividing by zero") {
  Rng rng(17);
  ReconConfig cfg;
  cfg.height = cfg.width = 16;
  cfg.unet_base = 2;
  Params<double> params;
  recon_init(params, cfg, rng);
  Tape<double> tape;
  auto pl = ParamLeaves<double>::make(tape, params, false);
  auto out = reconstruct(pl, cfg, tape.leaf(Tensor<double>({2, 16, 16}), false));
  CHECK(out.value().all_finite());
}

TEST_CASE("reconstruct gradient with respect to its input passes a finite-difference check") {
  Rng rng(19);
  ReconConfig cfg;
  cfg.height = cfg.width = 16;
  cfg.unet_base = 1;
  Params<double> params;
  recon_init(params, cfg, rng);
  auto fn = [&](const std::vector<Tensor<double>>& in,
                std::vector<Tensor<double>>* grads) -> double {
    Tape<double> tape;
    auto pl = ParamLeaves<double>::make(tape, params, false);
    auto x = tape.leaf(in[0], true);
    auto out = mean(square(reconstruct(pl, cfg, x)));
    if (grads) {
      tape.backward(out);
      *grads = {tape.grad(x)};
    }
    return out.value()[0];
  };
  CHECK(grad_check(fn, {random_grid(16, rng, 0.2, 1.0)}, 1e-4) < 2e-5);
}

TEST_CASE("reconstruct rejects mismatched extents") {
  Rng rng(23);
  ReconConfig cfg;
  cfg.height = cfg.width = 16;
  cfg.unet_base = 2;
  Params<double> params;
  recon_init(params, cfg, rng);
  Tape<double> tape;
  auto pl = ParamLeaves<double>::make(tape, params, false);
  CHECK_THROWS_AS(reconstruct(pl, cfg, tape.leaf(Tensor<double>({2, 8, 8}), false)),
                  ShapeError);
}
