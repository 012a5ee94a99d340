#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "seqmri/forward_model.hpp"
#include "seqmri/gradcheck.hpp"
#include "seqmri/rng.hpp"

using namespace seqmri;

namespace {
Tensor<double> random_image(int n, Rng& rng) {
  Tensor<double> t({n, n});
  for (auto& v : t.data) v = rng.uniform();
  return t;
}
Tensor<double> random_grid(int n, Rng& rng) {
  Tensor<double> t({2, n, n});
  for (auto& v : t.data) v = rng.uniform(-1, 1);
  return t;
}
}  // namespace

TEST_CASE("constant image transforms to a DC-only spectrum of value c*sqrt(MN)") {
  const int n = 16;
  const double c = 0.37;
  auto y = to_kspace(Tensor<double>::full({n, n}, c));
  const double expect = c * std::sqrt(static_cast<double>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double re = y.data[static_cast<std::size_t>(i) * n + j];
      const double im = y.data[n * n + static_cast<std::size_t>(i) * n + j];
      if (i == n / 2 && j == n / 2) {
        CHECK(re == doctest::Approx(expect).epsilon(1e-12));
        CHECK(std::abs(im) < 1e-12);
      } else {
        CHECK(std::abs(re) < 1e-12);
        CHECK(std::abs(im) < 1e-12);
      }
    }
}

TEST_CASE("fft round-trip and Parseval hold to 1e-10") {
  Rng rng(7);
  for (int trial = 0; trial < 3; ++trial) {
    auto x = random_grid(32, rng);
    auto y = fft2_unitary(x, false);
    auto back = fft2_unitary(y, true);
    double worst = 0, nx = 0, ny = 0;
    for (long long i = 0; i < x.numel(); ++i) {
      worst = std::max(worst, std::abs(back[i] - x[i]));
      nx += x[i] * x[i];
      ny += y[i] * y[i];
    }
    CHECK(worst < 1e-10);
    CHECK(std::abs(std::sqrt(nx) - std::sqrt(ny)) < 1e-10);
  }
}

TEST_CASE("real input gives a Hermitian-symmetric centered spectrum") {
  Rng rng(9);
  const int n = 16;
  auto y = to_kspace(random_image(n, rng));
  // conjugate symmetry about the center: Y(c+u) = conj(Y(c-u))
  for (int i = 1; i < n; ++i)
    for (int j = 1; j < n; ++j) {
      const int pi = n - i, pj = n - j;
      const double re = y.data[static_cast<std::size_t>(i) * n + j];
      const double im = y.data[n * n + static_cast<std::size_t>(i) * n + j];
      const double pre = y.data[static_cast<std::size_t>(pi) * n + pj];
      const double pim = y.data[n * n + static_cast<std::size_t>(pi) * n + pj];
      CHECK(std::abs(re - pre) < 1e-10);
      CHECK(std::abs(im + pim) < 1e-10);
    }
}

TEST_CASE("fft tape ops have exact adjoint gradients") {
  Rng rng(21);
  auto fn = [](const std::vector<Tensor<double>>& in,
               std::vector<Tensor<double>>* grads) -> double {
    Tape<double> tape;
    auto x = tape.leaf(in[0], true);
    auto y = fft2c(x);
    auto out = sum(mul(y, y));  // magnitude-style scalar
    if (grads) {
      tape.backward(out);
      *grads = {tape.grad(x)};
    }
    return out.value()[0];
  };
  CHECK(grad_check(fn, {random_grid(8, rng)}) < 1e-6);

  auto fn2 = [](const std::vector<Tensor<double>>& in,
                std::vector<Tensor<double>>* grads) -> double {
    Tape<double> tape;
    auto x = tape.leaf(in[0], true);
    auto out = mean(square(ifft2c(fft2c(x))));
    if (grads) {
      tape.backward(out);
      *grads = {tape.grad(x)};
    }
    return out.value()[0];
  };
  CHECK(grad_check(fn2, {random_grid(8, rng)}) < 1e-6);
}

TEST_CASE("non-power-of-two extents are rejected") {
  Tensor<double> bad({2, 12, 12});
  CHECK_THROWS_AS(fft2_unitary(bad, false), ShapeError);
}

TEST_CASE("apply_mask basics and idempotence") {
  Rng rng(5);
  auto y = random_grid(16, rng);
  Mask full = Mask::empty(MaskMode::kPoint, 16, 16);
  std::fill(full.bits.begin(), full.bits.end(), 1);
  auto same = apply_mask(y, full);
  for (long long i = 0; i < y.numel(); ++i) CHECK(same[i] == y[i]);

  Mask zero = Mask::empty(MaskMode::kPoint, 16, 16);
  auto none = apply_mask(y, zero);
  for (long long i = 0; i < none.numel(); ++i) CHECK(none[i] == 0.0);

  Mask half = Mask::empty(MaskMode::kPoint, 16, 16);
  for (std::size_t k = 0; k < half.bits.size(); k += 2) half.bits[k] = 1;
  auto once = apply_mask(y, half);
  auto twice = apply_mask(once, half);
  for (long long i = 0; i < y.numel(); ++i) CHECK(once[i] == twice[i]);
  // sampled entries are untouched
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j)
      if (half.at(i, j))
        CHECK(once.data[static_cast<std::size_t>(i) * 16 + j] ==
              y.data[static_cast<std::size_t>(i) * 16 + j]);
}

TEST_CASE("zero_fill recovers the image under a full mask and is linear") {
  Rng rng(13);
  auto x = random_image(16, rng);
  auto y = to_kspace(x);
  auto img = zero_fill(y);
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j) {
      const double re = img.data[static_cast<std::size_t>(i) * 16 + j];
      const double im = img.data[256 + static_cast<std::size_t>(i) * 16 + j];
      CHECK(std::abs(std::hypot(re, im) - std::abs(x.at(i, j))) < 1e-8);
    }

  // linearity: zero_fill(a y1 + y2) = a zero_fill(y1) + zero_fill(y2)
  auto y1 = random_grid(16, rng);
  auto y2 = random_grid(16, rng);
  const double a = 1.7;
  Tensor<double> comb({2, 16, 16});
  for (long long i = 0; i < comb.numel(); ++i) comb[i] = a * y1[i] + y2[i];
  auto lhs = zero_fill(comb);
  auto r1 = zero_fill(y1);
  auto r2 = zero_fill(y2);
  for (long long i = 0; i < lhs.numel(); ++i)
    CHECK(std::abs(lhs[i] - (a * r1[i] + r2[i])) < 1e-10);

  // unitarity: ||x_hat|| = ||y_hat||
  Mask half = Mask::empty(MaskMode::kPoint, 16, 16);
  for (std::size_t k = 0; k < half.bits.size(); k += 2) half.bits[k] = 1;
  auto yh = apply_mask(y, half);
  auto xh = zero_fill(yh);
  double ny = 0, nx = 0;
  for (long long i = 0; i < yh.numel(); ++i) {
    ny += yh[i] * yh[i];
    nx += xh[i] * xh[i];
  }
  CHECK(std::abs(std::sqrt(ny) - std::sqrt(nx)) < 1e-10);
}

TEST_CASE("acceleration arithmetic") {
  Mask m = Mask::empty(MaskMode::kPoint, 64, 64);
  for (int k = 0; k < 1024; ++k) m.bits[k] = 1;
  CHECK(acceleration(m) == doctest::Approx(4.0));

  Mask full = Mask::empty(MaskMode::kPoint, 8, 8);
  std::fill(full.bits.begin(), full.bits.end(), 1);
  CHECK(acceleration(full) == doctest::Approx(1.0));

  Mask lines = Mask::empty(MaskMode::kLine, 64, 64);
  for (int k = 0; k < 16; ++k) lines.bits[k] = 1;
  CHECK(acceleration(lines) == doctest::Approx(4.0));

  Mask empty = Mask::empty(MaskMode::kPoint, 8, 8);
  CHECK_THROWS_AS(acceleration(empty), ShapeError);
}

TEST_CASE("low_freq_mask point mode: exact budget, centered, near-symmetric") {
  AccelSpec spec;
  spec.mode = MaskMode::kPoint;
  spec.height = spec.width = 64;
  spec.accel = 4.0;
  spec.steps = 4;
  CHECK(spec.total_budget() == 1024);
  CHECK(spec.low_freq_budget() == 128);
  Mask m = low_freq_mask(spec);
  CHECK(m.sample_count() == 128);
  // centered: every selected point lies within Chebyshev radius 6 of DC
  for (int i = 0; i < 64; ++i)
    for (int j = 0; j < 64; ++j)
      if (m.at(i, j)) CHECK(std::max(std::abs(i - 32), std::abs(j - 32)) <= 6);
  // 180-degree rotation symmetry about DC, up to one odd remainder index
  int asym = 0;
  for (int i = 0; i < 64; ++i)
    for (int j = 0; j < 64; ++j)
      if (m.at(i, j) != m.at(64 - i == 64 ? 0 : 64 - i, 64 - j == 64 ? 0 : 64 - j)) ++asym;
  CHECK(asym <= 2);  // one unpaired point contributes two mismatches
}

TEST_CASE("low_freq_mask line mode picks the central columns") {
  AccelSpec spec;
  spec.mode = MaskMode::kLine;
  spec.height = spec.width = 64;
  spec.accel = 4.0;
  spec.steps = 2;
  CHECK(spec.total_budget() == 16);
  CHECK(spec.low_freq_budget() == 2);
  Mask m = low_freq_mask(spec);
  CHECK(m.sample_count() == 2);
  CHECK(m.bits[32] == 1);
  CHECK(m.bits[31] == 1);
}

TEST_CASE("per-step budgets add up to the full budget") {
  for (int T : {1, 2, 3, 4, 5}) {
    AccelSpec spec;
    spec.mode = MaskMode::kPoint;
    spec.height = spec.width = 64;
    spec.accel = 4.0;
    spec.steps = T;
    int total = spec.low_freq_budget();
    for (int t = 1; t <= T; ++t) total += spec.step_budget(t);
    CHECK(total == spec.total_budget());
    CHECK(spec.per_step_budget() >= 1);
  }
}

TEST_CASE("mask exports write parsable files") {
  AccelSpec spec;
  spec.mode = MaskMode::kPoint;
  spec.height = spec.width = 32;
  spec.accel = 4.0;
  spec.steps = 1;
  Mask m = low_freq_mask(spec);
  const std::string dir = "/tmp/seqmri_fm_test";
  std::filesystem::create_directories(dir);
  write_mask_pgm(dir + "/m.pgm", m);
  write_mask_json(dir + "/m.json", m, "deadbeef");
  std::ifstream is(dir + "/m.pgm", std::ios::binary);
  std::string magic;
  is >> magic;
  CHECK(magic == "P5");
  std::ifstream js(dir + "/m.json");
  std::string body((std::istreambuf_iterator<char>(js)), std::istreambuf_iterator<char>());
  CHECK(body.find("\"indices\"") != std::string::npos);
  CHECK(body.find("deadbeef") != std::string::npos);
}
