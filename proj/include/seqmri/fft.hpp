#pragma once

#include <cmath>
#include <vector>

#include "seqmri/tape.hpp"

namespace seqmri {

inline bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

namespace detail {

// in-place iterative radix-2 FFT, unscaled; inverse uses conjugate twiddles
template <class T>
void fft_radix2(T* re, T* im, int n, bool inverse) {
  // bit reversal
  for (int i = 1, j = 0; i < n; ++i) {
    int bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }
  const double pi = 3.14159265358979323846;
  for (int len = 2; len <= n; len <<= 1) {
    const double ang = (inverse ? 2.0 : -2.0) * pi / len;
    const double wr0 = std::cos(ang), wi0 = std::sin(ang);
    for (int i = 0; i < n; i += len) {
      double wr = 1.0, wi = 0.0;
      for (int k = 0; k < len / 2; ++k) {
        const int a = i + k, b = i + k + len / 2;
        const double ur = re[a], ui = im[a];
        const double vr = re[b] * wr - im[b] * wi;
        const double vi = re[b] * wi + im[b] * wr;
        re[a] = static_cast<T>(ur + vr);
        im[a] = static_cast<T>(ui + vi);
        re[b] = static_cast<T>(ur - vr);
        im[b] = static_cast<T>(ui - vi);
        const double nwr = wr * wr0 - wi * wi0;
        wi = wr * wi0 + wi * wr0;
        wr = nwr;
      }
    }
  }
}

}  // namespace detail

// Unitary 2-D DFT over a [2,H,W] tensor (channel 0 real, channel 1 imaginary).
// `centered` places DC at (H/2, W/2) on the way out (and expects it there on
// the way in for the inverse). Power-of-two extents only.
template <class T>
Tensor<T> fft2_unitary(const Tensor<T>& g, bool inverse, bool centered = true) {
  if (g.rank() != 3 || g.shape[0] != 2) throw ShapeError("fft2: [2,H,W] required");
  const int H = g.shape[1], W = g.shape[2];
  if (!is_pow2(H) || !is_pow2(W)) throw ShapeError("fft2: power-of-two extents required");
  Tensor<T> out = g;
  T* re = out.data.data();
  T* im = re + static_cast<std::size_t>(H) * W;

  auto shift = [&](T* p) {
    // swap quadrants: (i,j) <-> (i+H/2, j+W/2) and (i,j+W/2) <-> (i+H/2, j)
    const int h2 = H / 2, w2 = W / 2;
    for (int i = 0; i < h2; ++i)
      for (int j = 0; j < W; ++j)
        std::swap(p[static_cast<std::size_t>(i) * W + j],
                  p[(static_cast<std::size_t>(i) + h2) * W + ((j + w2) % W)]);
  };

  if (inverse && centered) {
    shift(re);
    shift(im);
  }
  // rows
  for (int i = 0; i < H; ++i)
    detail::fft_radix2(re + static_cast<std::size_t>(i) * W,
                       im + static_cast<std::size_t>(i) * W, W, inverse);
  // columns (via strided gather)
  std::vector<T> cr(H), ci(H);
  for (int j = 0; j < W; ++j) {
    for (int i = 0; i < H; ++i) {
      cr[i] = re[static_cast<std::size_t>(i) * W + j];
      ci[i] = im[static_cast<std::size_t>(i) * W + j];
    }
    detail::fft_radix2(cr.data(), ci.data(), H, inverse);
    for (int i = 0; i < H; ++i) {
      re[static_cast<std::size_t>(i) * W + j] = cr[i];
      im[static_cast<std::size_t>(i) * W + j] = ci[i];
    }
  }
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(H) * W));
  for (auto& v : out.data) v *= scale;
  if (!inverse && centered) {
    shift(re);
    shift(im);
  }
  return out;
}

// Tape ops. The unitary transform is its own adjoint's inverse, so the
// backward pass is just the opposite transform applied to the gradient.
template <class T>
Node<T> fft2c(Node<T> x) {
  Tape<T>* tp = x.tape;
  Tensor<T> out = fft2_unitary(x.value(), /*inverse=*/false);
  const int xid = x.id, oid = tp->next_id();
  auto back = [tp, xid, oid]() {
    Tensor<T> g = fft2_unitary(tp->out_grad(oid), /*inverse=*/true);
    Tensor<T>& gx = tp->grad_buf(xid);
    for (long long i = 0; i < gx.numel(); ++i) gx[i] += g[i];
  };
  return tp->push(std::move(out), x.requires_grad(), back);
}

template <class T>
Node<T> ifft2c(Node<T> y) {
  Tape<T>* tp = y.tape;
  Tensor<T> out = fft2_unitary(y.value(), /*inverse=*/true);
  const int yid = y.id, oid = tp->next_id();
  auto back = [tp, yid, oid]() {
    Tensor<T> g = fft2_unitary(tp->out_grad(oid), /*inverse=*/false);
    Tensor<T>& gy = tp->grad_buf(yid);
    for (long long i = 0; i < gy.numel(); ++i) gy[i] += g[i];
  };
  return tp->push(std::move(out), y.requires_grad(), back);
}

}  // namespace seqmri
