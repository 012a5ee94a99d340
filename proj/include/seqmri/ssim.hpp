#pragma once

#include <cmath>
#include <limits>

#include "seqmri/nn_ops.hpp"
#include "seqmri/tape.hpp"

namespace seqmri {

// Mean SSIM over all valid windows with a uniform (box) window, differentiable
// in x. y is a fixed reference. data_range sets the stabilization constants
// c1 = (k1 L)^2, c2 = (k2 L)^2.
template <class T>
Node<T> ssim(Node<T> x, const Tensor<T>& y, int window = 7, T k1 = T(0.01),
             T k2 = T(0.03), T data_range = T(1)) {
  Tape<T>* tp = x.tape;
  const Tensor<T>& xv = x.value();
  if (xv.rank() != 2) throw ShapeError("ssim: rank-2 images required");
  if (y.shape != xv.shape) throw ShapeError("ssim: shapes disagree");
  const int H = xv.shape[0], W = xv.shape[1];
  if (H < window || W < window) throw ShapeError("ssim: image smaller than window");
  if (!(data_range > T(0))) throw ShapeError("ssim: data_range must be positive");
  const T c1 = (k1 * data_range) * (k1 * data_range);
  const T c2 = (k2 * data_range) * (k2 * data_range);

  Node<T> kern = tp->constant(
      Tensor<T>::full({1, 1, window, window}, T(1) / static_cast<T>(window * window)));
  Node<T> xr = reshape(x, {1, H, W});
  Node<T> yr = tp->constant([&] {
    Tensor<T> t = y;
    t.shape = {1, H, W};
    return t;
  }());

  Node<T> mux = conv2d(xr, kern);
  Node<T> muy = conv2d(yr, kern);
  Node<T> mxx = conv2d(mul(xr, xr), kern);
  Node<T> myy = conv2d(mul(yr, yr), kern);
  Node<T> mxy = conv2d(mul(xr, yr), kern);
  Node<T> mux2 = mul(mux, mux);
  Node<T> muy2 = mul(muy, muy);
  Node<T> muxy = mul(mux, muy);
  Node<T> sx = sub(mxx, mux2);
  Node<T> sy = sub(myy, muy2);
  Node<T> sxy = sub(mxy, muxy);

  Node<T> num = mul(add_scalar(mul_scalar(muxy, T(2)), c1),
                    add_scalar(mul_scalar(sxy, T(2)), c2));
  Node<T> den = mul(add_scalar(add(mux2, muy2), c1), add_scalar(add(sx, sy), c2));
  return mean(div(num, den));
}

// Non-differentiable SSIM for metric reporting; same convention as the tape op.
template <class T>
double ssim_value(const Tensor<T>& x, const Tensor<T>& y, int window = 7,
                  double k1 = 0.01, double k2 = 0.03, double data_range = 1.0) {
  if (x.shape != y.shape || x.rank() != 2) throw ShapeError("ssim_value: bad shapes");
  const int H = x.shape[0], W = x.shape[1];
  if (H < window || W < window) throw ShapeError("ssim_value: image smaller than window");
  const double c1 = (k1 * data_range) * (k1 * data_range);
  const double c2 = (k2 * data_range) * (k2 * data_range);
  const double n = static_cast<double>(window) * window;
  double total = 0.0;
  long long count = 0;
  for (int i = 0; i + window <= H; ++i) {
    for (int j = 0; j + window <= W; ++j) {
      double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
      for (int a = 0; a < window; ++a)
        for (int b = 0; b < window; ++b) {
          const double xv = x.at(i + a, j + b);
          const double yv = y.at(i + a, j + b);
          sx += xv;
          sy += yv;
          sxx += xv * xv;
          syy += yv * yv;
          sxy += xv * yv;
        }
      const double mx = sx / n, my = sy / n;
      const double vx = sxx / n - mx * mx;
      const double vy = syy / n - my * my;
      const double cxy = sxy / n - mx * my;
      total += ((2 * mx * my + c1) * (2 * cxy + c2)) /
               ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

// PSNR with caller-chosen peak; infinity when images match exactly.
template <class T>
double psnr_value(const Tensor<T>& x, const Tensor<T>& ref, double peak) {
  if (x.shape != ref.shape) throw ShapeError("psnr_value: shapes disagree");
  double mse = 0;
  for (long long i = 0; i < x.numel(); ++i) {
    const double d = static_cast<double>(x[i]) - static_cast<double>(ref[i]);
    mse += d * d;
  }
  mse /= static_cast<double>(x.numel());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

}  // namespace seqmri
