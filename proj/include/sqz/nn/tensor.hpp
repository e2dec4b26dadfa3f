#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "sqz/error.hpp"

namespace sqz::nn {

/// Dense row-major tensor. T is float for training and double for gradient
/// verification.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, T fill = T(0)) : shape_(std::move(shape)) {
    for (std::size_t d : shape_) {
      if (d == 0) throw ShapeError("tensor extents must be positive");
    }
    data_.assign(count(shape_), fill);
  }
  Tensor(std::vector<std::size_t> shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != count(shape_)) throw ShapeError("tensor data length does not match its shape");
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, T fill = T(0)) { return Tensor({rows, cols}, fill); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  std::size_t rows() const { return shape_.at(0); }
  std::size_t cols() const { return shape_.at(1); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }
  T& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  T at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  Tensor& operator+=(const Tensor& o) {
    if (!same_shape(o)) throw ShapeError("tensor += with mismatched shapes");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

 private:
  static std::size_t count(const std::vector<std::size_t>& s) {
    return s.empty() ? 0 : std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }

  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
MatMap<T> as_mat(Tensor<T>& t) {
  return MatMap<T>(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.size() / t.rows()));
}

template <typename T>
ConstMatMap<T> as_mat(const Tensor<T>& t) {
  return ConstMatMap<T>(t.data(), static_cast<Eigen::Index>(t.rows()),
                        static_cast<Eigen::Index>(t.size() / t.rows()));
}

/// NaN guard run on every layer output.
template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(t[i])) throw StateError(std::string(op) + " produced a non-finite value");
  }
}

inline void expect_dim(std::size_t got, std::size_t want, const char* op, const char* what) {
  if (got != want) {
    throw ShapeError(std::string(op) + ": " + what + " is " + std::to_string(got) + ", expected " +
                     std::to_string(want));
  }
}

template <typename T>
void expect_matrix(const Tensor<T>& t, std::size_t cols, const char* op) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + ": expected a rank-2 input, got rank " + std::to_string(t.rank()));
  expect_dim(t.cols(), cols, op, "input dimension 1");
}

/// A named trainable tensor and its accumulated gradient.
template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Param() = default;
  Param(std::string n, std::vector<std::size_t> shape) : name(std::move(n)), value(shape), grad(shape) {}
  void zero_grad() { grad.fill(T(0)); }
};

template <typename T>
using ParamList = std::vector<Param<T>*>;

template <typename T>
void zero_grads(const ParamList<T>& ps) {
  for (auto* p : ps) p->zero_grad();
}

template <typename T>
std::size_t parameter_count(const ParamList<T>& ps) {
  std::size_t n = 0;
  for (const auto* p : ps) n += p->value.size();
  return n;
}

/// Scales all gradients so their global L2 norm is at most max_norm. Returns
/// the norm before clipping.
template <typename T>
double clip_grad_norm(const ParamList<T>& ps, double max_norm) {
  double sq = 0.0;
  for (const auto* p : ps) {
    for (std::size_t i = 0; i < p->grad.size(); ++i) sq += static_cast<double>(p->grad[i]) * p->grad[i];
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const auto s = static_cast<T>(max_norm / norm);
    for (auto* p : ps) {
      for (std::size_t i = 0; i < p->grad.size(); ++i) p->grad[i] *= s;
    }
  }
  return norm;
}

}  // namespace sqz::nn
