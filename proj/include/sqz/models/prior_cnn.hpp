#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sqz/nn/layers.hpp"

namespace sqz::models {

using nn::Tensor;

struct PriorCnnConfig {
  std::size_t bins = 80;
  std::size_t hidden = 128;
  std::size_t blocks = 4;
  std::size_t kernel = 5;
};

inline void to_json(nlohmann::json& j, const PriorCnnConfig& c) {
  j = {{"bins", c.bins}, {"hidden", c.hidden}, {"blocks", c.blocks}, {"kernel", c.kernel}};
}

inline void from_json(const nlohmann::json& j, PriorCnnConfig& c) {
  j.at("bins").get_to(c.bins);
  j.at("hidden").get_to(c.hidden);
  j.at("blocks").get_to(c.blocks);
  j.at("kernel").get_to(c.kernel);
}

/// Residual 1-D CNN over time that turns a frame-stretched mel into a coarse
/// estimate of the original. A constant log2(ratio) channel is appended to the
/// input so one network serves several ratios. The output head is
/// zero-initialised: an untrained network returns its input.
template <typename T>
class PriorCnn {
 public:
  struct BlockCache {
    typename nn::Gelu<T>::Cache act_a, act_b;
    typename nn::Conv1d<T>::Cache conv_a, conv_b;
  };
  struct Cache {
    typename nn::Conv1d<T>::Cache in, out;
    typename nn::Gelu<T>::Cache out_act;
    std::vector<BlockCache> blocks;
    bool valid = false;
  };

  PriorCnn() = default;
  explicit PriorCnn(const PriorCnnConfig& cfg)
      : cfg_(cfg),
        in_("prior.in", cfg.bins + 1, cfg.hidden, cfg.kernel),
        out_("prior.out", cfg.hidden, cfg.bins, cfg.kernel) {
    for (std::size_t i = 0; i < cfg.blocks; ++i) {
      const std::string n = "prior.block" + std::to_string(i);
      conv_a_.emplace_back(n + ".a", cfg.hidden, cfg.hidden, cfg.kernel);
      conv_b_.emplace_back(n + ".b", cfg.hidden, cfg.hidden, cfg.kernel);
    }
  }

  void init(Rng& rng) {
    in_.init(rng);
    for (std::size_t i = 0; i < conv_a_.size(); ++i) {
      conv_a_[i].init(rng);
      conv_b_[i].init(rng, 0.5);
    }
    out_.zero_init();
  }

  const PriorCnnConfig& config() const { return cfg_; }

  /// stretched [frames, bins] -> [frames, bins].
  Tensor<T> forward(const Tensor<T>& stretched, double ratio, Cache* c = nullptr) const {
    nn::expect_matrix(stretched, cfg_.bins, "PriorCnn");
    if (!(ratio > 0.0)) throw DomainError("PriorCnn: ratio must be positive");
    Cache local;
    Cache& k = c != nullptr ? *c : local;
    const bool keep = c != nullptr;
    const std::size_t frames = stretched.rows();
    Tensor<T> x = Tensor<T>::matrix(frames, cfg_.bins + 1);
    const auto rc = static_cast<T>(std::log2(ratio));
    for (std::size_t f = 0; f < frames; ++f) {
      std::copy_n(stretched.data() + f * cfg_.bins, cfg_.bins, x.data() + f * (cfg_.bins + 1));
      x.at(f, cfg_.bins) = rc;
    }
    Tensor<T> h = in_.forward(x, keep ? &k.in : nullptr);
    k.blocks.resize(keep ? conv_a_.size() : 0);
    for (std::size_t i = 0; i < conv_a_.size(); ++i) {
      BlockCache* b = keep ? &k.blocks[i] : nullptr;
      auto t = nn::Gelu<T>::forward(h, b ? &b->act_a : nullptr);
      t = conv_a_[i].forward(t, b ? &b->conv_a : nullptr);
      t = nn::Gelu<T>::forward(t, b ? &b->act_b : nullptr);
      h += conv_b_[i].forward(t, b ? &b->conv_b : nullptr);
    }
    Tensor<T> y = out_.forward(nn::Gelu<T>::forward(h, keep ? &k.out_act : nullptr), keep ? &k.out : nullptr);
    y += stretched;
    k.valid = keep;
    nn::check_finite(y, "PriorCnn");
    return y;
  }

  /// Returns the gradient with respect to the stretched input.
  Tensor<T> backward(const Tensor<T>& gy, const Cache& k) {
    nn::require_cache<T>(k.valid, "PriorCnn");
    nn::expect_matrix(gy, cfg_.bins, "PriorCnn backward");
    Tensor<T> gh = nn::Gelu<T>::backward(out_.backward(gy, k.out), k.out_act);
    for (std::size_t i = conv_a_.size(); i-- > 0;) {
      const BlockCache& b = k.blocks[i];
      auto g = conv_b_[i].backward(gh, b.conv_b);
      g = nn::Gelu<T>::backward(g, b.act_b);
      g = conv_a_[i].backward(g, b.conv_a);
      gh += nn::Gelu<T>::backward(g, b.act_a);
    }
    Tensor<T> gx = in_.backward(gh, k.in);
    Tensor<T> gs = gy;
    for (std::size_t f = 0; f < gy.rows(); ++f) {
      for (std::size_t b = 0; b < cfg_.bins; ++b) gs.at(f, b) += gx.at(f, b);
    }
    return gs;
  }

  void collect(nn::ParamList<T>& out) {
    in_.collect(out);
    for (std::size_t i = 0; i < conv_a_.size(); ++i) {
      conv_a_[i].collect(out);
      conv_b_[i].collect(out);
    }
    out_.collect(out);
  }

 private:
  PriorCnnConfig cfg_;
  nn::Conv1d<T> in_;
  std::vector<nn::Conv1d<T>> conv_a_, conv_b_;
  nn::Conv1d<T> out_;
};

}  // namespace sqz::models
