#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "seqmri/tensor.hpp"

namespace seqmri {

// Scalar-valued recorded function under test: evaluates at `inputs`; when
// `grads` is non-null it must also fill one analytic gradient per input.
// Implementations rebuild their tape on every call so repeated evaluation at
// perturbed inputs stays consistent (any internal randomness must be re-seeded
// identically per call).
using CheckedFn = std::function<double(const std::vector<Tensor<double>>& inputs,
                                       std::vector<Tensor<double>>* grads)>;

// Max over all input coordinates of |analytic - central difference| /
// max(1, |analytic|). 64-bit only.
inline double grad_check(const CheckedFn& f, std::vector<Tensor<double>> inputs,
                         double eps = 1e-5) {
  std::vector<Tensor<double>> analytic;
  f(inputs, &analytic);
  if (analytic.size() != inputs.size())
    throw std::invalid_argument("grad_check: function returned wrong gradient count");
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    if (analytic[k].shape != inputs[k].shape)
      throw std::invalid_argument("grad_check: gradient shape mismatch");
    for (long long i = 0; i < inputs[k].numel(); ++i) {
      const double keep = inputs[k][i];
      inputs[k][i] = keep + eps;
      const double fp = f(inputs, nullptr);
      inputs[k][i] = keep - eps;
      const double fm = f(inputs, nullptr);
      inputs[k][i] = keep;
      const double fd = (fp - fm) / (2.0 * eps);
      const double a = analytic[k][i];
      const double err = std::abs(a - fd) / std::max(1.0, std::abs(a));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace seqmri
