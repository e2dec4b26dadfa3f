#pragma once

#include <cmath>
#include <vector>

#include "sqz/nn/tensor.hpp"

namespace sqz::nn {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moments are allocated lazily to match the
/// parameter list the first time step() sees it.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamOptions opts = {}) : opts_(opts) {}

  void step(const ParamList<T>& params) {
    if (first_.empty()) {
      for (const auto* p : params) {
        first_.emplace_back(p->value.shape());
        second_.emplace_back(p->value.shape());
      }
    }
    if (first_.size() != params.size()) throw ShapeError("Adam: parameter list changed between steps");
    ++steps_;
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(steps_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Param<T>& p = *params[i];
      if (!p.grad.same_shape(p.value) || !first_[i].same_shape(p.value)) {
        throw ShapeError("Adam: gradient/moment shape mismatch for " + p.name);
      }
      for (std::size_t j = 0; j < p.value.size(); ++j) {
        const double g = p.grad[j];
        const double m = opts_.beta1 * first_[i][j] + (1.0 - opts_.beta1) * g;
        const double v = opts_.beta2 * second_[i][j] + (1.0 - opts_.beta2) * g * g;
        first_[i][j] = static_cast<T>(m);
        second_[i][j] = static_cast<T>(v);
        p.value[j] = static_cast<T>(p.value[j] - opts_.lr * (m / c1) / (std::sqrt(v / c2) + opts_.eps));
      }
    }
  }

  long steps() const { return steps_; }
  AdamOptions& options() { return opts_; }

 private:
  AdamOptions opts_;
  long steps_ = 0;
  std::vector<Tensor<T>> first_;
  std::vector<Tensor<T>> second_;
};

}  // namespace sqz::nn
