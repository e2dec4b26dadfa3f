#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "sqz/nn/tensor.hpp"

namespace sqz::nn {

/// Compares analytic gradients already accumulated in `params` against central
/// finite differences of `loss` (a forward-only evaluation) on every
/// coordinate. Returns the max relative error with denominator
/// max(|analytic|, |numeric|, 1e-8).
inline double grad_check(const ParamList<double>& params, const std::function<double()>& loss, double eps = 1e-4) {
  double worst = 0.0;
  for (auto* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + eps;
      const double up = loss();
      p->value[i] = saved - eps;
      const double down = loss();
      p->value[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double analytic = p->grad[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
  }
  return worst;
}

/// Same check for an input tensor the loss reads by reference.
inline double grad_check_input(Tensor<double>& input, const Tensor<double>& analytic,
                               const std::function<double()>& loss, double eps = 1e-4) {
  double worst = 0.0;
  for (std::size_t i = 0; i < input.size(); ++i) {
    const double saved = input[i];
    input[i] = saved + eps;
    const double up = loss();
    input[i] = saved - eps;
    const double down = loss();
    input[i] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

}  // namespace sqz::nn
