#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "seqmri/params.hpp"
#include "seqmri/tape.hpp"

namespace seqmri {

template <class T>
struct AdamState {
  std::map<std::string, Tensor<T>> m;  // first moment
  std::map<std::string, Tensor<T>> v;  // second moment
  std::int64_t step = 0;
  T lr = T(1e-3);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
};

// One Adam update with bias correction. Grads must align with params by
// name and shape; moments are created on first use.
template <class T>
void adam_step(Params<T>& params, const std::map<std::string, Tensor<T>>& grads,
               AdamState<T>& state) {
  for (const auto& [name, g] : grads)
    if (!params.contains(name))
      throw ShapeError("adam_step: gradient for unknown parameter " + name);
  state.step += 1;
  const double bc1 = 1.0 - std::pow(static_cast<double>(state.beta1), state.step);
  const double bc2 = 1.0 - std::pow(static_cast<double>(state.beta2), state.step);
  for (auto& [name, p] : params.values) {
    auto git = grads.find(name);
    if (git == grads.end()) throw ShapeError("adam_step: missing gradient for " + name);
    const Tensor<T>& g = git->second;
    if (g.shape != p.shape) throw ShapeError("adam_step: gradient shape mismatch for " + name);
    Tensor<T>& m = state.m.try_emplace(name, Tensor<T>::zeros(p.shape)).first->second;
    Tensor<T>& v = state.v.try_emplace(name, Tensor<T>::zeros(p.shape)).first->second;
    for (long long i = 0; i < p.numel(); ++i) {
      m[i] = state.beta1 * m[i] + (T(1) - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (T(1) - state.beta2) * g[i] * g[i];
      const double mhat = static_cast<double>(m[i]) / bc1;
      const double vhat = static_cast<double>(v[i]) / bc2;
      p[i] -= static_cast<T>(static_cast<double>(state.lr) * mhat /
                             (std::sqrt(vhat) + static_cast<double>(state.eps)));
    }
  }
}

// ---------------------------------------------------------------------------
// checkpoint helpers combining params and optimizer state into one file
// ---------------------------------------------------------------------------

template <class T>
void save_checkpoint(const std::string& path, const Params<T>& params,
                     const AdamState<T>* state = nullptr) {
  std::map<std::string, Tensor<T>> recs = params.values;
  if (state) {
    for (const auto& [k, t] : state->m) recs.emplace("adam:m:" + k, t);
    for (const auto& [k, t] : state->v) recs.emplace("adam:v:" + k, t);
    recs.emplace("adam:step", Tensor<T>::scalar(static_cast<T>(state->step)));
  }
  save_records(path, recs);
}

template <class T>
Params<T> load_checkpoint(const std::string& path, AdamState<T>* state = nullptr) {
  auto recs = load_records<T>(path);
  Params<T> params;
  for (auto& [name, t] : recs) {
    if (name.rfind("adam:", 0) == 0) {
      if (!state) continue;
      if (name == "adam:step")
        state->step = static_cast<std::int64_t>(t[0]);
      else if (name.rfind("adam:m:", 0) == 0)
        state->m.emplace(name.substr(7), std::move(t));
      else if (name.rfind("adam:v:", 0) == 0)
        state->v.emplace(name.substr(7), std::move(t));
    } else {
      params.values.emplace(name, std::move(t));
    }
  }
  return params;
}

}  // namespace seqmri
