#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "seqmri/tensor.hpp"

namespace seqmri {

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

template <class T>
class Tape;

// Lightweight handle into a tape recording.
template <class T>
struct Node {
  Tape<T>* tape = nullptr;
  int id = -1;

  const Tensor<T>& value() const;
  bool requires_grad() const;
};

// Single-writer recording of a differentiable computation. The reverse pass
// visits records exactly once, in reverse creation order, which is valid for
// any DAG built through the op functions.
template <class T>
class Tape {
 public:
  struct Rec {
    Tensor<T> value;
    bool rg = false;
    std::function<void()> back;  // empty for leaves / non-grad nodes
  };

  bool check_finite = true;

  Node<T> leaf(Tensor<T> v, bool requires_grad) {
    return push(std::move(v), requires_grad, {});
  }
  Node<T> constant(Tensor<T> v) { return leaf(std::move(v), false); }

  // id the next push() will receive; backward closures capture it up front
  int next_id() const { return static_cast<int>(recs_.size()); }

  Node<T> push(Tensor<T> v, bool rg, std::function<void()> back) {
    if (check_finite && !v.all_finite())
      throw NumericError("non-finite value produced at tape node " +
                         std::to_string(recs_.size()));
    recs_.push_back(Rec{std::move(v), rg, rg ? std::move(back) : std::function<void()>{}});
    return Node<T>{this, static_cast<int>(recs_.size()) - 1};
  }

  const Tensor<T>& value(int id) const { return recs_[id].value; }
  bool requires_grad(int id) const { return recs_[id].rg; }
  std::size_t size() const { return recs_.size(); }

  // Gradient of `out` (scalar) w.r.t. every recorded node that contributed.
  void backward(Node<T> out) {
    if (out.tape != this) throw ShapeError("backward: node from another tape");
    if (recs_[out.id].value.numel() != 1)
      throw ShapeError("backward: output must be scalar");
    grads_.assign(recs_.size(), Tensor<T>{});
    if (!recs_[out.id].rg) return;
    grads_[out.id] = Tensor<T>::scalar(T(1));
    for (int i = out.id; i >= 0; --i) {
      if (recs_[i].rg && grads_[i].numel() > 0 && recs_[i].back) recs_[i].back();
    }
    if (check_finite) {
      for (std::size_t i = 0; i < grads_.size(); ++i)
        if (grads_[i].numel() > 0 && !grads_[i].all_finite())
          throw NumericError("non-finite gradient at tape node " + std::to_string(i));
    }
  }

  // Gradient of a node after backward(); zeros if it never received one.
  Tensor<T> grad(Node<T> n) const {
    if (n.id < static_cast<int>(grads_.size()) && grads_[n.id].numel() > 0)
      return grads_[n.id];
    return Tensor<T>::zeros(recs_[n.id].value.shape);
  }
  bool has_grad(Node<T> n) const {
    return n.id < static_cast<int>(grads_.size()) && grads_[n.id].numel() > 0;
  }

  // Zero-initialized accumulation buffer for a node's gradient.
  Tensor<T>& grad_buf(int id) {
    if (grads_[id].numel() == 0) grads_[id] = Tensor<T>::zeros(recs_[id].value.shape);
    return grads_[id];
  }
  const Tensor<T>& out_grad(int id) const { return grads_[id]; }

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

 private:
  std::vector<Rec> recs_;
  std::vector<Tensor<T>> grads_;
};

template <class T>
const Tensor<T>& Node<T>::value() const {
  return tape->value(id);
}
template <class T>
bool Node<T>::requires_grad() const {
  return tape->requires_grad(id);
}

namespace detail {
template <class T>
void check_same_tape(Node<T> a, Node<T> b) {
  if (a.tape != b.tape) throw ShapeError("op: nodes from different tapes");
}
}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise binary ops (equal shapes, or either side a 1-element scalar)
// ---------------------------------------------------------------------------

// fwd(a,b) -> value; da(a,b), db(a,b) -> local partials
template <class T, class FwdFn, class DaFn, class DbFn>
Node<T> ew_binary(Node<T> a, Node<T> b, FwdFn fwd, DaFn da, DbFn db, const char* name) {
  detail::check_same_tape(a, b);
  Tape<T>* tp = a.tape;
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  const bool as = av.numel() == 1 && bv.numel() != 1;
  const bool bs = bv.numel() == 1 && av.numel() != 1;
  if (!as && !bs && av.shape != bv.shape)
    throw ShapeError(std::string(name) + ": shape mismatch " + shape_str(av.shape) +
                     " vs " + shape_str(bv.shape));
  Tensor<T> out(as ? bv.shape : av.shape);
  const long long n = out.numel();
  for (long long i = 0; i < n; ++i) out[i] = fwd(av[as ? 0 : i], bv[bs ? 0 : i]);

  const bool rg = a.requires_grad() || b.requires_grad();
  const int aid = a.id, bid = b.id, oid = tp->next_id();
  auto back = [tp, aid, bid, oid, as, bs, n, da, db]() {
    const Tensor<T>& go = tp->out_grad(oid);
    const Tensor<T>& av2 = tp->value(aid);
    const Tensor<T>& bv2 = tp->value(bid);
    if (tp->requires_grad(aid)) {
      Tensor<T>& ga = tp->grad_buf(aid);
      for (long long i = 0; i < n; ++i)
        ga[as ? 0 : i] += da(av2[as ? 0 : i], bv2[bs ? 0 : i]) * go[i];
    }
    if (tp->requires_grad(bid)) {
      Tensor<T>& gb = tp->grad_buf(bid);
      for (long long i = 0; i < n; ++i)
        gb[bs ? 0 : i] += db(av2[as ? 0 : i], bv2[bs ? 0 : i]) * go[i];
    }
  };
  return tp->push(std::move(out), rg, back);
}

template <class T>
Node<T> add(Node<T> a, Node<T> b) {
  return ew_binary(
      a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
      [](T, T) { return T(1); }, "add");
}
template <class T>
Node<T> sub(Node<T> a, Node<T> b) {
  return ew_binary(
      a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
      [](T, T) { return T(-1); }, "sub");
}
template <class T>
Node<T> mul(Node<T> a, Node<T> b) {
  return ew_binary(
      a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
      [](T x, T) { return x; }, "mul");
}
template <class T>
Node<T> div(Node<T> a, Node<T> b) {
  return ew_binary(
      a, b, [](T x, T y) { return x / y; }, [](T, T y) { return T(1) / y; },
      [](T x, T y) { return -x / (y * y); }, "div");
}

// ---------------------------------------------------------------------------
// elementwise unary ops
// ---------------------------------------------------------------------------

// fwd(x) -> value; dfn(x, y) -> dy/dx given input x and output y
template <class T, class FwdFn, class DFn>
Node<T> ew_unary(Node<T> a, FwdFn fwd, DFn dfn) {
  Tape<T>* tp = a.tape;
  const Tensor<T>& av = a.value();
  Tensor<T> out(av.shape);
  const long long n = out.numel();
  for (long long i = 0; i < n; ++i) out[i] = fwd(av[i]);
  const int aid = a.id, oid = tp->next_id();
  auto back = [tp, aid, oid, n, dfn]() {
    const Tensor<T>& go = tp->out_grad(oid);
    const Tensor<T>& av2 = tp->value(aid);
    const Tensor<T>& ov = tp->value(oid);
    Tensor<T>& ga = tp->grad_buf(aid);
    for (long long i = 0; i < n; ++i) ga[i] += dfn(av2[i], ov[i]) * go[i];
  };
  return tp->push(std::move(out), a.requires_grad(), back);
}

template <class T>
Node<T> neg(Node<T> a) {
  return ew_unary(a, [](T x) { return -x; }, [](T, T) { return T(-1); });
}
template <class T>
Node<T> add_scalar(Node<T> a, T c) {
  return ew_unary(a, [c](T x) { return x + c; }, [](T, T) { return T(1); });
}
template <class T>
Node<T> mul_scalar(Node<T> a, T c) {
  return ew_unary(a, [c](T x) { return x * c; }, [c](T, T) { return c; });
}
template <class T>
Node<T> relu(Node<T> a) {
  return ew_unary(a, [](T x) { return x > T(0) ? x : T(0); },
                  [](T x, T) { return x > T(0) ? T(1) : T(0); });
}
template <class T>
Node<T> softplus(Node<T> a) {
  // numerically stable: softplus(x) = max(x,0) + log1p(exp(-|x|))
  auto fwd = [](T x) {
    T ax = x > T(0) ? x : -x;
    T base = x > T(0) ? x : T(0);
    return base + static_cast<T>(std::log1p(std::exp(static_cast<double>(-ax))));
  };
  auto dfn = [](T x, T) {
    return static_cast<T>(1.0 / (1.0 + std::exp(static_cast<double>(-x))));
  };
  return ew_unary(a, fwd, dfn);
}
template <class T>
Node<T> sigmoid(Node<T> a) {
  auto fwd = [](T x) {
    return static_cast<T>(1.0 / (1.0 + std::exp(static_cast<double>(-x))));
  };
  return ew_unary(a, fwd, [](T, T y) { return y * (T(1) - y); });
}
template <class T>
Node<T> sqrt_eps(Node<T> a, T eps) {
  // sqrt(x + eps); eps keeps the gradient finite at zero magnitude
  auto fwd = [eps](T x) { return static_cast<T>(std::sqrt(static_cast<double>(x + eps))); };
  return ew_unary(a, fwd, [](T, T y) { return T(1) / (T(2) * y); });
}
template <class T>
Node<T> square(Node<T> a) {
  return ew_unary(a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <class T>
Node<T> sum(Node<T> a) {
  Tape<T>* tp = a.tape;
  const Tensor<T>& av = a.value();
  T s = 0;
  for (long long i = 0; i < av.numel(); ++i) s += av[i];
  const int aid = a.id, oid = tp->next_id();
  auto back = [tp, aid, oid]() {
    const T g = tp->out_grad(oid)[0];
    Tensor<T>& ga = tp->grad_buf(aid);
    for (long long i = 0; i < ga.numel(); ++i) ga[i] += g;
  };
  return tp->push(Tensor<T>::scalar(s), a.requires_grad(), back);
}

template <class T>
Node<T> div_scalar(Node<T> a, T c) {
  return ew_unary(a, [c](T x) { return x / c; }, [c](T, T) { return T(1) / c; });
}

template <class T>
Node<T> mean(Node<T> a) {
  // divide rather than multiply by 1/n so mean of n ones is exactly 1
  const long long n = a.value().numel();
  return div_scalar(sum(a), static_cast<T>(n));
}

// grad routed to the first argmax only
template <class T>
Node<T> reduce_max(Node<T> a) {
  Tape<T>* tp = a.tape;
  const Tensor<T>& av = a.value();
  long long arg = 0;
  for (long long i = 1; i < av.numel(); ++i)
    if (av[i] > av[arg]) arg = i;
  const int aid = a.id, oid = tp->next_id();
  auto back = [tp, aid, oid, arg]() {
    tp->grad_buf(aid)[arg] += tp->out_grad(oid)[0];
  };
  return tp->push(Tensor<T>::scalar(av[arg]), a.requires_grad(), back);
}

// ---------------------------------------------------------------------------
// shape plumbing
// ---------------------------------------------------------------------------

template <class T>
Node<T> reshape(Node<T> a, std::vector<int> new_shape) {
  Tape<T>* tp = a.tape;
  Tensor<T> out = a.value();
  if (Tensor<T>::numel_of(new_shape) != out.numel())
    throw ShapeError("reshape: element count mismatch");
  out.shape = std::move(new_shape);
  const int aid = a.id, oid = tp->next_id();
  auto back = [tp, aid, oid]() {
    const Tensor<T>& go = tp->out_grad(oid);
    Tensor<T>& ga = tp->grad_buf(aid);
    for (long long i = 0; i < ga.numel(); ++i) ga[i] += go[i];
  };
  return tp->push(std::move(out), a.requires_grad(), back);
}

// rank-1 concatenation
template <class T>
Node<T> concat(Node<T> a, Node<T> b) {
  detail::check_same_tape(a, b);
  Tape<T>* tp = a.tape;
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  if (av.rank() != 1 || bv.rank() != 1) throw ShapeError("concat: rank-1 only");
  Tensor<T> out({av.shape[0] + bv.shape[0]});
  for (long long i = 0; i < av.numel(); ++i) out[i] = av[i];
  for (long long i = 0; i < bv.numel(); ++i) out[av.numel() + i] = bv[i];
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

// [H,W] -> [W], mean over rows
template <class T>
Node<T> mean_rows(Node<T> a) {
  Tape<T>* tp = a.tape;
  const Tensor<T>& av = a.value();
  if (av.rank() != 2) throw ShapeError("mean_rows: rank-2 input required");
  const int h = av.shape[0], w = av.shape[1];
  Tensor<T> out({w});
  for (int j = 0; j < w; ++j) {
    T s = 0;
    for (int i = 0; i < h; ++i) s += av.at(i, j);
    out[j] = s / static_cast<T>(h);
  }
  const int aid = a.id, oid = tp->next_id();
  auto back = [tp, aid, oid, h, w]() {
    const Tensor<T>& go = tp->out_grad(oid);
    Tensor<T>& ga = tp->grad_buf(aid);
    const T inv = T(1) / static_cast<T>(h);
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) ga.data[static_cast<std::size_t>(i) * w + j] += go[j] * inv;
  };
  return tp->push(std::move(out), a.requires_grad(), back);
}

}  // namespace seqmri
