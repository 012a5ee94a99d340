#pragma once

#include <vector>

#include "seqmri/tape.hpp"

namespace seqmri {

namespace detail {

// C[m,n] += A[m,p] * B[p,n], row-major
template <class T>
void gemm(const T* A, const T* B, T* C, int m, int p, int n) {
  for (int i = 0; i < m; ++i) {
    const T* Ai = A + static_cast<std::size_t>(i) * p;
    T* Ci = C + static_cast<std::size_t>(i) * n;
    for (int k = 0; k < p; ++k) {
      const T a = Ai[k];
      if (a == T(0)) continue;
      const T* Bk = B + static_cast<std::size_t>(k) * n;
      for (int j = 0; j < n; ++j) Ci[j] += a * Bk[j];
    }
  }
}

// C[m,n] += A^T * B where A is [p,m], B is [p,n]
template <class T>
void gemm_AtB(const T* A, const T* B, T* C, int p, int m, int n) {
  for (int k = 0; k < p; ++k) {
    const T* Ak = A + static_cast<std::size_t>(k) * m;
    const T* Bk = B + static_cast<std::size_t>(k) * n;
    for (int i = 0; i < m; ++i) {
      const T a = Ak[i];
      if (a == T(0)) continue;
      T* Ci = C + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) Ci[j] += a * Bk[j];
    }
  }
}

// C[m,n] += A * B^T where A is [m,p], B is [n,p]
template <class T>
void gemm_ABt(const T* A, const T* B, T* C, int m, int p, int n) {
  for (int i = 0; i < m; ++i) {
    const T* Ai = A + static_cast<std::size_t>(i) * p;
    T* Ci = C + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const T* Bj = B + static_cast<std::size_t>(j) * p;
      T s = 0;
      for (int k = 0; k < p; ++k) s += Ai[k] * Bj[k];
      Ci[j] += s;
    }
  }
}

// x [C,H,W] -> col [C*kh*kw, Ho*Wo], zero padding
template <class T>
void im2col(const T* x, int C, int H, int W, int kh, int kw, int stride, int pad,
            int Ho, int Wo, T* col) {
  const int cols = Ho * Wo;
  for (int c = 0; c < C; ++c) {
    const T* xc = x + static_cast<std::size_t>(c) * H * W;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        T* row = col + (static_cast<std::size_t>(c) * kh * kw + ki * kw + kj) * cols;
        for (int oi = 0; oi < Ho; ++oi) {
          const int ii = oi * stride + ki - pad;
          T* rr = row + static_cast<std::size_t>(oi) * Wo;
          if (ii < 0 || ii >= H) {
            for (int oj = 0; oj < Wo; ++oj) rr[oj] = T(0);
            continue;
          }
          const T* xr = xc + static_cast<std::size_t>(ii) * W;
          for (int oj = 0; oj < Wo; ++oj) {
            const int jj = oj * stride + kj - pad;
            rr[oj] = (jj >= 0 && jj < W) ? xr[jj] : T(0);
          }
        }
      }
    }
  }
}

// adjoint of im2col: accumulate col [C*kh*kw, Ho*Wo] back into x [C,H,W]
template <class T>
void col2im_acc(const T* col, int C, int H, int W, int kh, int kw, int stride, int pad,
                int Ho, int Wo, T* x) {
  const int cols = Ho * Wo;
  for (int c = 0; c < C; ++c) {
    T* xc = x + static_cast<std::size_t>(c) * H * W;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const T* row = col + (static_cast<std::size_t>(c) * kh * kw + ki * kw + kj) * cols;
        for (int oi = 0; oi < Ho; ++oi) {
          const int ii = oi * stride + ki - pad;
          if (ii < 0 || ii >= H) continue;
          const T* rr = row + static_cast<std::size_t>(oi) * Wo;
          T* xr = xc + static_cast<std::size_t>(ii) * W;
          for (int oj = 0; oj < Wo; ++oj) {
            const int jj = oj * stride + kj - pad;
            if (jj >= 0 && jj < W) xr[jj] += rr[oj];
          }
        }
      }
    }
  }
}

}  // namespace detail

// y = x W + b with x [I] or [B,I], W [I,O], b [O]
template <class T>
Node<T> linear(Node<T> x, Node<T> W, Node<T> b) {
  detail::check_same_tape(x, W);
  detail::check_same_tape(x, b);
  Tape<T>* tp = x.tape;
  const Tensor<T>& xv = x.value();
  const Tensor<T>& Wv = W.value();
  const Tensor<T>& bv = b.value();
  const bool vec = xv.rank() == 1;
  if (!vec && xv.rank() != 2) throw ShapeError("linear: x must be rank 1 or 2");
  if (Wv.rank() != 2) throw ShapeError("linear: W must be rank 2");
  const int B = vec ? 1 : xv.shape[0];
  const int I = vec ? xv.shape[0] : xv.shape[1];
  const int O = Wv.shape[1];
  if (Wv.shape[0] != I) throw ShapeError("linear: inner dimensions disagree");
  if (bv.rank() != 1 || bv.shape[0] != O) throw ShapeError("linear: bias shape");

  Tensor<T> out(vec ? std::vector<int>{O} : std::vector<int>{B, O});
  for (int r = 0; r < B; ++r)
    for (int j = 0; j < O; ++j) out[static_cast<long long>(r) * O + j] = bv[j];
  detail::gemm(xv.data.data(), Wv.data.data(), out.data.data(), B, I, O);

  const bool rg = x.requires_grad() || W.requires_grad() || b.requires_grad();
  const int xid = x.id, Wid = W.id, bid = b.id, oid = tp->next_id();
  auto back = [tp, xid, Wid, bid, oid, B, I, O]() {
    const Tensor<T>& go = tp->out_grad(oid);
    const Tensor<T>& xv2 = tp->value(xid);
    const Tensor<T>& Wv2 = tp->value(Wid);
    if (tp->requires_grad(xid)) {
      // dx = go W^T
      detail::gemm_ABt(go.data.data(), Wv2.data.data(), tp->grad_buf(xid).data.data(), B, O, I);
    }
    if (tp->requires_grad(Wid)) {
      // dW = x^T go
      detail::gemm_AtB(xv2.data.data(), go.data.data(), tp->grad_buf(Wid).data.data(), B, I, O);
    }
    if (tp->requires_grad(bid)) {
      Tensor<T>& gb = tp->grad_buf(bid);
      for (int r = 0; r < B; ++r)
        for (int j = 0; j < O; ++j) gb[j] += go[static_cast<long long>(r) * O + j];
    }
  };
  return tp->push(std::move(out), rg, back);
}

// cross-correlation with zero padding; x [C,H,W] or [B,C,H,W], kernel [O,C,kh,kw]
template <class T>
Node<T> conv2d(Node<T> x, Node<T> kernel, int stride = 1, int pad = 0) {
  detail::check_same_tape(x, kernel);
  Tape<T>* tp = x.tape;
  const Tensor<T>& xv = x.value();
  const Tensor<T>& kv = kernel.value();
  if (stride < 1 || pad < 0) throw ShapeError("conv2d: invalid stride/padding");
  const bool batched = xv.rank() == 4;
  if (!batched && xv.rank() != 3) throw ShapeError("conv2d: x must be rank 3 or 4");
  if (kv.rank() != 4) throw ShapeError("conv2d: kernel must be rank 4 [O,C,kh,kw]");
  const int B = batched ? xv.shape[0] : 1;
  const int C = batched ? xv.shape[1] : xv.shape[0];
  const int H = batched ? xv.shape[2] : xv.shape[1];
  const int W = batched ? xv.shape[3] : xv.shape[2];
  const int O = kv.shape[0], kh = kv.shape[2], kw = kv.shape[3];
  if (kv.shape[1] != C) throw ShapeError("conv2d: channel counts disagree");
  if (kh > H + 2 * pad || kw > W + 2 * pad)
    throw ShapeError("conv2d: kernel larger than padded input");
  const int Ho = (H + 2 * pad - kh) / stride + 1;
  const int Wo = (W + 2 * pad - kw) / stride + 1;
  const int kc = C * kh * kw;
  const int cols = Ho * Wo;

  Tensor<T> out(batched ? std::vector<int>{B, O, Ho, Wo} : std::vector<int>{O, Ho, Wo});
  std::vector<T> col(static_cast<std::size_t>(kc) * cols);
  for (int bIdx = 0; bIdx < B; ++bIdx) {
    detail::im2col(xv.data.data() + static_cast<std::size_t>(bIdx) * C * H * W, C, H, W,
                   kh, kw, stride, pad, Ho, Wo, col.data());
    detail::gemm(kv.data.data(), col.data(),
                 out.data.data() + static_cast<std::size_t>(bIdx) * O * cols, O, kc, cols);
  }

  const bool rg = x.requires_grad() || kernel.requires_grad();
  const int xid = x.id, kid = kernel.id, oid = tp->next_id();
  auto back = [tp, xid, kid, oid, B, C, H, W, O, kh, kw, stride, pad, Ho, Wo]() {
    const int kc2 = C * kh * kw;
    const int cols2 = Ho * Wo;
    const Tensor<T>& go = tp->out_grad(oid);
    const Tensor<T>& xv2 = tp->value(xid);
    const Tensor<T>& kv2 = tp->value(kid);
    std::vector<T> col(static_cast<std::size_t>(kc2) * cols2);
    const bool need_x = tp->requires_grad(xid);
    const bool need_k = tp->requires_grad(kid);
    for (int bIdx = 0; bIdx < B; ++bIdx) {
      const T* gob = go.data.data() + static_cast<std::size_t>(bIdx) * O * cols2;
      if (need_k) {
        detail::im2col(xv2.data.data() + static_cast<std::size_t>(bIdx) * C * H * W, C, H,
                       W, kh, kw, stride, pad, Ho, Wo, col.data());
        // dK += go col^T
        detail::gemm_ABt(gob, col.data(), tp->grad_buf(kid).data.data(), O, cols2, kc2);
      }
      if (need_x) {
        // dcol = K^T go, then scatter back
        std::fill(col.begin(), col.end(), T(0));
        detail::gemm_AtB(kv2.data.data(), gob, col.data(), O, kc2, cols2);
        detail::col2im_acc(col.data(), C, H, W, kh, kw, stride, pad, Ho, Wo,
                           tp->grad_buf(xid).data.data() +
                               static_cast<std::size_t>(bIdx) * C * H * W);
      }
    }
  };
  return tp->push(std::move(out), rg, back);
}

// per-channel bias on [C,H,W]
template <class T>
Node<T> add_channel_bias(Node<T> x, Node<T> b) {
  detail::check_same_tape(x, b);
  Tape<T>* tp = x.tape;
  const Tensor<T>& xv = x.value();
  const Tensor<T>& bv = b.value();
  if (xv.rank() != 3 || bv.rank() != 1 || bv.shape[0] != xv.shape[0])
    throw ShapeError("add_channel_bias: expected [C,H,W] and [C]");
  const int C = xv.shape[0], plane = xv.shape[1] * xv.shape[2];
  Tensor<T> out = xv;
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < plane; ++i) out[static_cast<long long>(c) * plane + i] += bv[c];
  const int xid = x.id, bid = b.id, oid = tp->next_id();
  auto back = [tp, xid, bid, oid, C, plane]() {
    const Tensor<T>& go = tp->out_grad(oid);
    if (tp->requires_grad(xid)) {
      Tensor<T>& gx = tp->grad_buf(xid);
      for (long long i = 0; i < gx.numel(); ++i) gx[i] += go[i];
    }
    if (tp->requires_grad(bid)) {
      Tensor<T>& gb = tp->grad_buf(bid);
      for (int c = 0; c < C; ++c) {
        T s = 0;
        for (int i = 0; i < plane; ++i) s += go[static_cast<long long>(c) * plane + i];
        gb[c] += s;
      }
    }
  };
  return tp->push(std::move(out), x.requires_grad() || b.requires_grad(), back);
}

// nearest-neighbor 2x upsampling, [C,H,W] -> [C,2H,2W]
template <class T>
Node<T> upsample2x(Node<T> x) {
  Tape<T>* tp = x.tape;
  const Tensor<T>& xv = x.value();
  if (xv.rank() != 3) throw ShapeError("upsample2x: [C,H,W] required");
  const int C = xv.shape[0], H = xv.shape[1], W = xv.shape[2];
  Tensor<T> out({C, 2 * H, 2 * W});
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < 2 * H; ++i)
      for (int j = 0; j < 2 * W; ++j)
        out.data[(static_cast<std::size_t>(c) * 2 * H + i) * 2 * W + j] =
            xv.data[(static_cast<std::size_t>(c) * H + i / 2) * W + j / 2];
  const int xid = x.id, oid = tp->next_id();
  auto back = [tp, xid, oid, C, H, W]() {
    const Tensor<T>& go = tp->out_grad(oid);
    Tensor<T>& gx = tp->grad_buf(xid);
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < 2 * H; ++i)
        for (int j = 0; j < 2 * W; ++j)
          gx.data[(static_cast<std::size_t>(c) * H + i / 2) * W + j / 2] +=
              go.data[(static_cast<std::size_t>(c) * 2 * H + i) * 2 * W + j];
  };
  return tp->push(std::move(out), x.requires_grad(), back);
}

// 2x average pooling, [C,H,W] -> [C,H/2,W/2]; extents must be even
template <class T>
Node<T> avgpool2x(Node<T> x) {
  Tape<T>* tp = x.tape;
  const Tensor<T>& xv = x.value();
  if (xv.rank() != 3) throw ShapeError("avgpool2x: [C,H,W] required");
  const int C = xv.shape[0], H = xv.shape[1], W = xv.shape[2];
  if (H % 2 || W % 2) throw ShapeError("avgpool2x: odd spatial extents");
  Tensor<T> out({C, H / 2, W / 2});
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < H / 2; ++i)
      for (int j = 0; j < W / 2; ++j) {
        const T* p = xv.data.data() + (static_cast<std::size_t>(c) * H + 2 * i) * W + 2 * j;
        out.data[(static_cast<std::size_t>(c) * (H / 2) + i) * (W / 2) + j] =
            (p[0] + p[1] + p[W] + p[W + 1]) * T(0.25);
      }
  const int xid = x.id, oid = tp->next_id();
  auto back = [tp, xid, oid, C, H, W]() {
    const Tensor<T>& go = tp->out_grad(oid);
    Tensor<T>& gx = tp->grad_buf(xid);
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < H / 2; ++i)
        for (int j = 0; j < W / 2; ++j) {
          const T g = go.data[(static_cast<std::size_t>(c) * (H / 2) + i) * (W / 2) + j] * T(0.25);
          T* p = gx.data.data() + (static_cast<std::size_t>(c) * H + 2 * i) * W + 2 * j;
          p[0] += g;
          p[1] += g;
          p[W] += g;
          p[W + 1] += g;
        }
  };
  return tp->push(std::move(out), x.requires_grad(), back);
}

// stack channels: [Ca,H,W] + [Cb,H,W] -> [Ca+Cb,H,W]
template <class T>
Node<T> concat_channels(Node<T> a, Node<T> b) {
  detail::check_same_tape(a, b);
  Tape<T>* tp = a.tape;
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  if (av.rank() != 3 || bv.rank() != 3 || av.shape[1] != bv.shape[1] ||
      av.shape[2] != bv.shape[2])
    throw ShapeError("concat_channels: spatial extents disagree");
  Tensor<T> out({av.shape[0] + bv.shape[0], av.shape[1], av.shape[2]});
  std::copy(av.data.begin(), av.data.end(), out.data.begin());
  std::copy(bv.data.begin(), bv.data.end(), out.data.begin() + av.numel());
  const int aid = a.id, bid = b.id, oid = tp->next_id();
  const long long na = av.numel(), nb = bv.numel();
  auto back = [tp, aid, bid, oid, na, nb]() {
    const Tensor<T>& go = tp->out_grad(oid);
    if (tp->requires_grad(aid)) {
      Tensor<T>& ga = tp->grad_buf(aid);
      for (long long i = 0; i < na; ++i) ga[i] += go[i];
    }
    if (tp->requires_grad(bid)) {
      Tensor<T>& gb = tp->grad_buf(bid);
      for (long long i = 0; i < nb; ++i) gb[i] += go[na + i];
    }
  };
  return tp->push(std::move(out), a.requires_grad() || b.requires_grad(), back);
}

// view of channels [c0, c0+count) of [C,H,W]
template <class T>
Node<T> channel_slice(Node<T> x, int c0, int count) {
  Tape<T>* tp = x.tape;
  const Tensor<T>& xv = x.value();
  if (xv.rank() != 3 || c0 < 0 || c0 + count > xv.shape[0])
    throw ShapeError("channel_slice: bad range");
  const long long plane = static_cast<long long>(xv.shape[1]) * xv.shape[2];
  Tensor<T> out({count, xv.shape[1], xv.shape[2]});
  std::copy(xv.data.begin() + c0 * plane, xv.data.begin() + (c0 + count) * plane,
            out.data.begin());
  const int xid = x.id, oid = tp->next_id();
  auto back = [tp, xid, oid, c0, plane, count]() {
    const Tensor<T>& go = tp->out_grad(oid);
    Tensor<T>& gx = tp->grad_buf(xid);
    for (long long i = 0; i < count * plane; ++i) gx[c0 * plane + i] += go[i];
  };
  return tp->push(std::move(out), x.requires_grad(), back);
}

// affine-free instance normalization over each channel plane of [C,H,W]
template <class T>
Node<T> instance_norm(Node<T> x, T eps = T(1e-5)) {
  Tape<T>* tp = x.tape;
  const Tensor<T>& xv = x.value();
  if (xv.rank() != 3) throw ShapeError("instance_norm: [C,H,W] required");
  const int C = xv.shape[0];
  const long long plane = static_cast<long long>(xv.shape[1]) * xv.shape[2];
  if (plane < 2) throw ShapeError("instance_norm: plane size must be >= 2");
  Tensor<T> out(xv.shape);
  std::vector<T> inv_std(C);
  for (int c = 0; c < C; ++c) {
    const T* p = xv.data.data() + c * plane;
    T mu = 0;
    for (long long i = 0; i < plane; ++i) mu += p[i];
    mu /= static_cast<T>(plane);
    T var = 0;
    for (long long i = 0; i < plane; ++i) var += (p[i] - mu) * (p[i] - mu);
    var /= static_cast<T>(plane);
    const T is = T(1) / static_cast<T>(std::sqrt(static_cast<double>(var + eps)));
    inv_std[c] = is;
    T* o = out.data.data() + c * plane;
    for (long long i = 0; i < plane; ++i) o[i] = (p[i] - mu) * is;
  }
  const int xid = x.id, oid = tp->next_id();
  auto back = [tp, xid, oid, C, plane, inv_std]() {
    const Tensor<T>& go = tp->out_grad(oid);
    const Tensor<T>& ov = tp->value(oid);  // normalized values
    Tensor<T>& gx = tp->grad_buf(xid);
    for (int c = 0; c < C; ++c) {
      const T* g = go.data.data() + c * plane;
      const T* xh = ov.data.data() + c * plane;
      T* out_g = gx.data.data() + c * plane;
      T mg = 0, mgx = 0;
      for (long long i = 0; i < plane; ++i) {
        mg += g[i];
        mgx += g[i] * xh[i];
      }
      mg /= static_cast<T>(plane);
      mgx /= static_cast<T>(plane);
      const T is = inv_std[c];
      for (long long i = 0; i < plane; ++i) out_g[i] += is * (g[i] - mg - xh[i] * mgx);
    }
  };
  return tp->push(std::move(out), x.requires_grad(), back);
}

}  // namespace seqmri
