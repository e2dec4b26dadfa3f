#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "sqz/nn/tensor.hpp"
#include "sqz/rng.hpp"

namespace sqz::nn {

// Layers keep parameters only. Activations needed by backward live in a
// per-call Cache owned by the caller, so a const forward on a shared module is
// safe from several threads.

template <typename T>
void init_normal(Param<T>& p, Rng& rng, double stddev) {
  for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = static_cast<T>(stddev * rng.normal());
}

template <typename T>
void require_cache(bool valid, const char* op) {
  if (!valid) throw StateError(std::string(op) + ": backward called without a retained forward");
}

// ---------------------------------------------------------------------------

template <typename T>
class Linear {
 public:
  struct Cache {
    Tensor<T> x;
    bool valid = false;
  };

  Linear() = default;
  Linear(std::string name, std::size_t in, std::size_t out, bool bias = true)
      : in_(in), out_(out), has_bias_(bias), weight_(name + ".weight", {in, out}), bias_(name + ".bias", {out}) {}

  void init(Rng& rng, double gain = 1.0) {
    init_normal(weight_, rng, gain / std::sqrt(static_cast<double>(in_)));
    bias_.value.fill(T(0));
  }
  void zero_init() {
    weight_.value.fill(T(0));
    bias_.value.fill(T(0));
  }
  void set_identity() {
    weight_.value.fill(T(0));
    for (std::size_t i = 0; i < std::min(in_, out_); ++i) weight_.value.at(i, i) = T(1);
    bias_.value.fill(T(0));
  }

  Tensor<T> forward(const Tensor<T>& x, Cache* cache = nullptr) const {
    expect_matrix(x, in_, "Linear");
    Tensor<T> y = Tensor<T>::matrix(x.rows(), out_);
    auto ym = as_mat(y);
    ym.noalias() = as_mat(x) * as_mat(weight_.value);
    if (has_bias_) {
      ym.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias_.value.data(),
                                                                            static_cast<Eigen::Index>(out_));
    }
    if (cache != nullptr) {
      cache->x = x;
      cache->valid = true;
    }
    check_finite(y, "Linear");
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy, const Cache& cache) {
    require_cache<T>(cache.valid, "Linear");
    expect_matrix(gy, out_, "Linear backward");
    as_mat(weight_.grad).noalias() += as_mat(cache.x).transpose() * as_mat(gy);
    if (has_bias_) {
      auto gb = Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias_.grad.data(), static_cast<Eigen::Index>(out_));
      gb += as_mat(gy).colwise().sum();
    }
    Tensor<T> gx = Tensor<T>::matrix(gy.rows(), in_);
    as_mat(gx).noalias() = as_mat(gy) * as_mat(weight_.value).transpose();
    return gx;
  }

  void collect(ParamList<T>& out) {
    out.push_back(&weight_);
    if (has_bias_) out.push_back(&bias_);
  }

  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }
  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }

 private:
  std::size_t in_ = 0;
  std::size_t out_ = 0;
  bool has_bias_ = true;
  Param<T> weight_;
  Param<T> bias_;
};

// ---------------------------------------------------------------------------

/// 1-D convolution along the row (time) axis with zero "same" padding.
/// Input [time, in_channels] -> [time, out_channels].
template <typename T>
class Conv1d {
 public:
  struct Cache {
    Tensor<T> columns;  // [time, kernel * in]
    bool valid = false;
  };

  Conv1d() = default;
  Conv1d(std::string name, std::size_t in, std::size_t out, std::size_t kernel)
      : in_(in), out_(out), kernel_(kernel), weight_(name + ".weight", {kernel * in, out}), bias_(name + ".bias", {out}) {
    if (kernel % 2 == 0) throw ShapeError("Conv1d: kernel size must be odd");
  }

  void init(Rng& rng, double gain = 1.0) {
    init_normal(weight_, rng, gain / std::sqrt(static_cast<double>(kernel_ * in_)));
    bias_.value.fill(T(0));
  }
  void zero_init() {
    weight_.value.fill(T(0));
    bias_.value.fill(T(0));
  }

  Tensor<T> forward(const Tensor<T>& x, Cache* cache = nullptr) const {
    expect_matrix(x, in_, "Conv1d");
    Tensor<T> cols = im2col(x);
    Tensor<T> y = Tensor<T>::matrix(x.rows(), out_);
    auto ym = as_mat(y);
    ym.noalias() = as_mat(cols) * as_mat(weight_.value);
    ym.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias_.value.data(),
                                                                          static_cast<Eigen::Index>(out_));
    if (cache != nullptr) {
      cache->columns = std::move(cols);
      cache->valid = true;
    }
    check_finite(y, "Conv1d");
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy, const Cache& cache) {
    require_cache<T>(cache.valid, "Conv1d");
    expect_matrix(gy, out_, "Conv1d backward");
    as_mat(weight_.grad).noalias() += as_mat(cache.columns).transpose() * as_mat(gy);
    auto gb = Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias_.grad.data(), static_cast<Eigen::Index>(out_));
    gb += as_mat(gy).colwise().sum();
    Tensor<T> gcols = Tensor<T>::matrix(gy.rows(), kernel_ * in_);
    as_mat(gcols).noalias() = as_mat(gy) * as_mat(weight_.value).transpose();
    // col2im
    const std::size_t steps = gy.rows();
    const auto half = static_cast<std::ptrdiff_t>(kernel_ / 2);
    Tensor<T> gx = Tensor<T>::matrix(steps, in_);
    for (std::size_t t = 0; t < steps; ++t) {
      for (std::size_t j = 0; j < kernel_; ++j) {
        const auto src = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(j) - half;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(steps)) continue;
        const T* g = gcols.data() + t * kernel_ * in_ + j * in_;
        T* dst = gx.data() + static_cast<std::size_t>(src) * in_;
        for (std::size_t c = 0; c < in_; ++c) dst[c] += g[c];
      }
    }
    return gx;
  }

  void collect(ParamList<T>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

 private:
  Tensor<T> im2col(const Tensor<T>& x) const {
    const std::size_t steps = x.rows();
    const auto half = static_cast<std::ptrdiff_t>(kernel_ / 2);
    Tensor<T> cols = Tensor<T>::matrix(steps, kernel_ * in_);
    for (std::size_t t = 0; t < steps; ++t) {
      for (std::size_t j = 0; j < kernel_; ++j) {
        const auto src = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(j) - half;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(steps)) continue;
        std::copy_n(x.data() + static_cast<std::size_t>(src) * in_, in_, cols.data() + t * kernel_ * in_ + j * in_);
      }
    }
    return cols;
  }

  std::size_t in_ = 0;
  std::size_t out_ = 0;
  std::size_t kernel_ = 1;
  Param<T> weight_;
  Param<T> bias_;
};

// ---------------------------------------------------------------------------

/// 2-D convolution with zero "same" padding. Input [in, H, W] -> [out, H, W].
template <typename T>
class Conv2d {
 public:
  struct Cache {
    Tensor<T> columns;  // [H*W, in*kh*kw]
    bool valid = false;
  };

  Conv2d() = default;
  Conv2d(std::string name, std::size_t in, std::size_t out, std::size_t kh, std::size_t kw)
      : in_(in), out_(out), kh_(kh), kw_(kw), weight_(name + ".weight", {in * kh * kw, out}), bias_(name + ".bias", {out}) {
    if (kh % 2 == 0 || kw % 2 == 0) throw ShapeError("Conv2d: kernel sizes must be odd");
  }

  void init(Rng& rng, double gain = 1.0) {
    init_normal(weight_, rng, gain / std::sqrt(static_cast<double>(in_ * kh_ * kw_)));
    bias_.value.fill(T(0));
  }

  Tensor<T> forward(const Tensor<T>& x, Cache* cache = nullptr) const {
    if (x.rank() != 3) throw ShapeError("Conv2d: expected a rank-3 input [channels, height, width]");
    expect_dim(x.dim(0), in_, "Conv2d", "input dimension 0");
    const std::size_t h = x.dim(1);
    const std::size_t w = x.dim(2);
    Tensor<T> cols = Tensor<T>::matrix(h * w, in_ * kh_ * kw_);
    const auto hh = static_cast<std::ptrdiff_t>(kh_ / 2);
    const auto hw = static_cast<std::ptrdiff_t>(kw_ / 2);
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        T* row = cols.data() + (i * w + j) * in_ * kh_ * kw_;
        for (std::size_t c = 0; c < in_; ++c) {
          for (std::size_t a = 0; a < kh_; ++a) {
            for (std::size_t b = 0; b < kw_; ++b) {
              const auto si = static_cast<std::ptrdiff_t>(i + a) - hh;
              const auto sj = static_cast<std::ptrdiff_t>(j + b) - hw;
              if (si < 0 || sj < 0 || si >= static_cast<std::ptrdiff_t>(h) || sj >= static_cast<std::ptrdiff_t>(w)) continue;
              row[(c * kh_ + a) * kw_ + b] = x[(c * h + static_cast<std::size_t>(si)) * w + static_cast<std::size_t>(sj)];
            }
          }
        }
      }
    }
    RowMat<T> y = as_mat(cols) * as_mat(weight_.value);
    Tensor<T> out({out_, h, w});
    for (std::size_t p = 0; p < h * w; ++p) {
      for (std::size_t o = 0; o < out_; ++o) {
        out[o * h * w + p] = y(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(o)) + bias_.value[o];
      }
    }
    if (cache != nullptr) {
      cache->columns = std::move(cols);
      cache->valid = true;
    }
    check_finite(out, "Conv2d");
    return out;
  }

  Tensor<T> backward(const Tensor<T>& gy, const Cache& cache) {
    require_cache<T>(cache.valid, "Conv2d");
    if (gy.rank() != 3) throw ShapeError("Conv2d backward: expected a rank-3 gradient");
    expect_dim(gy.dim(0), out_, "Conv2d backward", "gradient dimension 0");
    const std::size_t h = gy.dim(1);
    const std::size_t w = gy.dim(2);
    RowMat<T> g(static_cast<Eigen::Index>(h * w), static_cast<Eigen::Index>(out_));
    for (std::size_t p = 0; p < h * w; ++p) {
      for (std::size_t o = 0; o < out_; ++o) {
        g(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(o)) = gy[o * h * w + p];
        bias_.grad[o] += gy[o * h * w + p];
      }
    }
    as_mat(weight_.grad).noalias() += as_mat(cache.columns).transpose() * g;
    RowMat<T> gcols = g * as_mat(weight_.value).transpose();
    Tensor<T> gx({in_, h, w});
    const auto hh = static_cast<std::ptrdiff_t>(kh_ / 2);
    const auto hw = static_cast<std::ptrdiff_t>(kw_ / 2);
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        const auto p = static_cast<Eigen::Index>(i * w + j);
        for (std::size_t c = 0; c < in_; ++c) {
          for (std::size_t a = 0; a < kh_; ++a) {
            for (std::size_t b = 0; b < kw_; ++b) {
              const auto si = static_cast<std::ptrdiff_t>(i + a) - hh;
              const auto sj = static_cast<std::ptrdiff_t>(j + b) - hw;
              if (si < 0 || sj < 0 || si >= static_cast<std::ptrdiff_t>(h) || sj >= static_cast<std::ptrdiff_t>(w)) continue;
              gx[(c * h + static_cast<std::size_t>(si)) * w + static_cast<std::size_t>(sj)] +=
                  gcols(p, static_cast<Eigen::Index>((c * kh_ + a) * kw_ + b));
            }
          }
        }
      }
    }
    return gx;
  }

  void collect(ParamList<T>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

 private:
  std::size_t in_ = 0;
  std::size_t out_ = 0;
  std::size_t kh_ = 1;
  std::size_t kw_ = 1;
  Param<T> weight_;
  Param<T> bias_;
};

// ---------------------------------------------------------------------------

/// Normalises each row over the last dimension; the affine part is optional
/// (adaptive-norm blocks supply their own shift and scale).
template <typename T>
class LayerNorm {
 public:
  struct Cache {
    Tensor<T> normed;
    std::vector<T> rstd;
    bool valid = false;
  };

  LayerNorm() = default;
  LayerNorm(std::string name, std::size_t dim, bool affine, double eps = 1e-6)
      : dim_(dim), affine_(affine), eps_(eps) {
    if (affine_) {
      gamma_ = Param<T>(name + ".gamma", {dim});
      beta_ = Param<T>(name + ".beta", {dim});
      gamma_.value.fill(T(1));
    }
  }

  Tensor<T> forward(const Tensor<T>& x, Cache* cache = nullptr) const {
    expect_matrix(x, dim_, "LayerNorm");
    const std::size_t rows = x.rows();
    Tensor<T> normed = Tensor<T>::matrix(rows, dim_);
    std::vector<T> rstd(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* in = x.data() + r * dim_;
      double mean = 0.0;
      for (std::size_t c = 0; c < dim_; ++c) mean += in[c];
      mean /= static_cast<double>(dim_);
      double var = 0.0;
      for (std::size_t c = 0; c < dim_; ++c) var += (in[c] - mean) * (in[c] - mean);
      var /= static_cast<double>(dim_);
      const double s = 1.0 / std::sqrt(var + eps_);
      rstd[r] = static_cast<T>(s);
      for (std::size_t c = 0; c < dim_; ++c) normed.at(r, c) = static_cast<T>((in[c] - mean) * s);
    }
    Tensor<T> y = normed;
    if (affine_) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < dim_; ++c) y.at(r, c) = normed.at(r, c) * gamma_.value[c] + beta_.value[c];
      }
    }
    if (cache != nullptr) {
      cache->normed = std::move(normed);
      cache->rstd = std::move(rstd);
      cache->valid = true;
    }
    check_finite(y, "LayerNorm");
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy, const Cache& cache) {
    require_cache<T>(cache.valid, "LayerNorm");
    expect_matrix(gy, dim_, "LayerNorm backward");
    const std::size_t rows = gy.rows();
    Tensor<T> gx = Tensor<T>::matrix(rows, dim_);
    std::vector<double> g(dim_);
    for (std::size_t r = 0; r < rows; ++r) {
      double mean_g = 0.0;
      double mean_gx = 0.0;
      for (std::size_t c = 0; c < dim_; ++c) {
        const T xh = cache.normed.at(r, c);
        double gc = gy.at(r, c);
        if (affine_) {
          gamma_.grad[c] += gy.at(r, c) * xh;
          beta_.grad[c] += gy.at(r, c);
          gc *= gamma_.value[c];
        }
        g[c] = gc;
        mean_g += gc;
        mean_gx += gc * xh;
      }
      mean_g /= static_cast<double>(dim_);
      mean_gx /= static_cast<double>(dim_);
      for (std::size_t c = 0; c < dim_; ++c) {
        gx.at(r, c) = static_cast<T>(cache.rstd[r] * (g[c] - mean_g - cache.normed.at(r, c) * mean_gx));
      }
    }
    return gx;
  }

  void collect(ParamList<T>& out) {
    if (affine_) {
      out.push_back(&gamma_);
      out.push_back(&beta_);
    }
  }

 private:
  std::size_t dim_ = 0;
  bool affine_ = false;
  double eps_ = 1e-6;
  Param<T> gamma_;
  Param<T> beta_;
};

// ---------------------------------------------------------------------------

template <typename T>
T gelu(T x) {
  return static_cast<T>(0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)));
}

template <typename T>
T gelu_grad(T x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * static_cast<double>(x) * x) / std::sqrt(2.0 * std::numbers::pi);
  return static_cast<T>(cdf + x * pdf);
}

/// Element-wise GELU (erf form). The cache keeps the input.
template <typename T>
struct Gelu {
  struct Cache {
    Tensor<T> x;
    bool valid = false;
  };

  static Tensor<T> forward(const Tensor<T>& x, Cache* cache = nullptr) {
    Tensor<T> y = x;
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = gelu(x[i]);
    if (cache != nullptr) {
      cache->x = x;
      cache->valid = true;
    }
    return y;
  }

  static Tensor<T> backward(const Tensor<T>& gy, const Cache& cache) {
    require_cache<T>(cache.valid, "Gelu");
    Tensor<T> gx = gy;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= gelu_grad(cache.x[i]);
    return gx;
  }
};

// ---------------------------------------------------------------------------

/// Multi-head scaled dot-product attention. Self-attention passes the same
/// tensor as query and key/value source.
template <typename T>
class MultiHeadAttention {
 public:
  struct Cache {
    typename Linear<T>::Cache q_in, k_in, v_in, o_in;
    Tensor<T> q, k, v;
    std::vector<RowMat<T>> probs;  // one [Nq, Nk] per head
    bool valid = false;
  };

  MultiHeadAttention() = default;
  MultiHeadAttention(const std::string& name, std::size_t dim, std::size_t heads)
      : dim_(dim),
        heads_(heads),
        q_(name + ".q", dim, dim),
        k_(name + ".k", dim, dim, false),  // a key bias only shifts logits per query
        v_(name + ".v", dim, dim),
        o_(name + ".o", dim, dim) {
    if (heads == 0 || dim % heads != 0) throw ShapeError("attention: dim must be divisible by heads");
  }

  void init(Rng& rng) {
    q_.init(rng);
    k_.init(rng);
    v_.init(rng);
    o_.init(rng);
  }

  Tensor<T> forward(const Tensor<T>& xq, const Tensor<T>& xkv, Cache* cache = nullptr) const {
    expect_matrix(xq, dim_, "attention query");
    expect_matrix(xkv, dim_, "attention key/value");
    Cache local;
    Cache& c = cache != nullptr ? *cache : local;
    const bool keep = cache != nullptr;
    c.q = q_.forward(xq, keep ? &c.q_in : nullptr);
    c.k = k_.forward(xkv, keep ? &c.k_in : nullptr);
    c.v = v_.forward(xkv, keep ? &c.v_in : nullptr);
    const auto nq = static_cast<Eigen::Index>(xq.rows());
    const auto nk = static_cast<Eigen::Index>(xkv.rows());
    const auto dh = static_cast<Eigen::Index>(dim_ / heads_);
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    Tensor<T> mixed = Tensor<T>::matrix(xq.rows(), dim_);
    c.probs.assign(heads_, RowMat<T>());
    const auto d = static_cast<Eigen::Index>(dim_);
    for (std::size_t h = 0; h < heads_; ++h) {
      const auto off = static_cast<Eigen::Index>(h) * dh;
      auto qh = head_view(c.q, off, nq, dh, d);
      auto kh = head_view(c.k, off, nk, dh, d);
      auto vh = head_view(c.v, off, nk, dh, d);
      RowMat<T> s = (qh * kh.transpose()) * scale;
      for (Eigen::Index r = 0; r < nq; ++r) {
        const T mx = s.row(r).maxCoeff();
        s.row(r) = (s.row(r).array() - mx).exp();
        s.row(r) /= s.row(r).sum();
      }
      Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>> out(mixed.data() + off, nq, dh, Eigen::OuterStride<>(d));
      out.noalias() = s * vh;
      c.probs[h] = std::move(s);
    }
    Tensor<T> y = o_.forward(mixed, keep ? &c.o_in : nullptr);
    c.valid = keep;
    return y;
  }

  struct Grads {
    Tensor<T> query;
    Tensor<T> key_value;
  };

  Grads backward(const Tensor<T>& gy, const Cache& c) {
    require_cache<T>(c.valid, "MultiHeadAttention");
    Tensor<T> gmixed = o_.backward(gy, c.o_in);
    const auto nq = static_cast<Eigen::Index>(c.q.rows());
    const auto nk = static_cast<Eigen::Index>(c.k.rows());
    const auto dh = static_cast<Eigen::Index>(dim_ / heads_);
    const auto d = static_cast<Eigen::Index>(dim_);
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    Tensor<T> gq = Tensor<T>::matrix(c.q.rows(), dim_);
    Tensor<T> gk = Tensor<T>::matrix(c.k.rows(), dim_);
    Tensor<T> gv = Tensor<T>::matrix(c.v.rows(), dim_);
    for (std::size_t h = 0; h < heads_; ++h) {
      const auto off = static_cast<Eigen::Index>(h) * dh;
      const RowMat<T>& p = c.probs[h];
      auto go = head_view(gmixed, off, nq, dh, d);
      auto qh = head_view(c.q, off, nq, dh, d);
      auto kh = head_view(c.k, off, nk, dh, d);
      auto vh = head_view(c.v, off, nk, dh, d);
      RowMat<T> gp = go * vh.transpose();
      Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>> gvh(gv.data() + off, nk, dh, Eigen::OuterStride<>(d));
      gvh.noalias() += p.transpose() * go;
      RowMat<T> gs = p.cwiseProduct(gp);
      const Eigen::Matrix<T, Eigen::Dynamic, 1> rowdot = gs.rowwise().sum();
      gs -= p.cwiseProduct(rowdot.replicate(1, nk));
      gs *= scale;
      Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>> gqh(gq.data() + off, nq, dh, Eigen::OuterStride<>(d));
      Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>> gkh(gk.data() + off, nk, dh, Eigen::OuterStride<>(d));
      gqh.noalias() += gs * kh;
      gkh.noalias() += gs.transpose() * qh;
    }
    Grads g;
    g.query = q_.backward(gq, c.q_in);
    g.key_value = k_.backward(gk, c.k_in);
    g.key_value += v_.backward(gv, c.v_in);
    return g;
  }

  void collect(ParamList<T>& out) {
    q_.collect(out);
    k_.collect(out);
    v_.collect(out);
    o_.collect(out);
  }

  Linear<T>& out_proj() { return o_; }

 private:
  static Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>> head_view(const Tensor<T>& t, Eigen::Index off,
                                                                        Eigen::Index rows, Eigen::Index cols,
                                                                        Eigen::Index stride) {
    return {t.data() + off, rows, cols, Eigen::OuterStride<>(stride)};
  }

  std::size_t dim_ = 0;
  std::size_t heads_ = 1;
  Linear<T> q_, k_, v_, o_;
};

// ---------------------------------------------------------------------------

/// [cos(v f_0) .. cos(v f_{d/2-1}), sin(v f_0) .. ] with geometric frequencies
/// f_i = 10000^(-i / (d/2)).
template <typename T>
Tensor<T> sinusoidal_embedding(double value, std::size_t dim) {
  Tensor<T> e = Tensor<T>::matrix(1, dim);
  const std::size_t half = dim / 2;
  for (std::size_t i = 0; i < half; ++i) {
    const double f = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
    e[i] = static_cast<T>(std::cos(value * f));
    e[half + i] = static_cast<T>(std::sin(value * f));
  }
  return e;
}

/// Row n is sinusoidal_embedding(n, dim).
template <typename T>
Tensor<T> positional_encoding(std::size_t n, std::size_t dim) {
  Tensor<T> pe = Tensor<T>::matrix(n, dim);
  for (std::size_t r = 0; r < n; ++r) {
    const auto row = sinusoidal_embedding<T>(static_cast<double>(r), dim);
    std::copy_n(row.data(), dim, pe.data() + r * dim);
  }
  return pe;
}

/// Two-layer GELU MLP with a hidden expansion.
template <typename T>
class Mlp {
 public:
  struct Cache {
    typename Linear<T>::Cache fc1, fc2;
    typename Gelu<T>::Cache act;
  };

  Mlp() = default;
  Mlp(const std::string& name, std::size_t dim, std::size_t hidden)
      : fc1_(name + ".fc1", dim, hidden), fc2_(name + ".fc2", hidden, dim) {}

  void init(Rng& rng) {
    fc1_.init(rng);
    fc2_.init(rng);
  }

  Tensor<T> forward(const Tensor<T>& x, Cache* c = nullptr) const {
    auto h = fc1_.forward(x, c ? &c->fc1 : nullptr);
    h = Gelu<T>::forward(h, c ? &c->act : nullptr);
    return fc2_.forward(h, c ? &c->fc2 : nullptr);
  }

  Tensor<T> backward(const Tensor<T>& gy, const Cache& c) {
    auto g = fc2_.backward(gy, c.fc2);
    g = Gelu<T>::backward(g, c.act);
    return fc1_.backward(g, c.fc1);
  }

  void collect(ParamList<T>& out) {
    fc1_.collect(out);
    fc2_.collect(out);
  }

 private:
  Linear<T> fc1_, fc2_;
};

}  // namespace sqz::nn
