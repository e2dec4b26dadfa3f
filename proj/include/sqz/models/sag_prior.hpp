#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sqz/nn/layers.hpp"

namespace sqz::models {

using nn::Tensor;

struct SagPriorConfig {
  std::size_t sem_dim = 32;
  std::size_t bins = 80;
  std::size_t dim = 256;
  std::size_t depth = 6;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
};

inline void to_json(nlohmann::json& j, const SagPriorConfig& c) {
  j = {{"sem_dim", c.sem_dim}, {"bins", c.bins},   {"dim", c.dim},
       {"depth", c.depth},     {"heads", c.heads}, {"mlp_ratio", c.mlp_ratio}};
}

inline void from_json(const nlohmann::json& j, SagPriorConfig& c) {
  j.at("sem_dim").get_to(c.sem_dim);
  j.at("bins").get_to(c.bins);
  j.at("dim").get_to(c.dim);
  j.at("depth").get_to(c.depth);
  j.at("heads").get_to(c.heads);
  j.at("mlp_ratio").get_to(c.mlp_ratio);
}

/// One bidirectional layer: the semantic stream attends to the mel stream and
/// the mel stream attends to the semantic stream, both reading the streams as
/// they were on entry, then each stream gets its own MLP.
template <typename T>
class CrossLayer {
 public:
  struct Cache {
    typename nn::LayerNorm<T>::Cache ln_s, ln_m, ln_s2, ln_m2;
    Tensor<T> s_n, m_n;
    typename nn::MultiHeadAttention<T>::Cache sm, ms;
    typename nn::Mlp<T>::Cache mlp_s, mlp_m;
  };

  CrossLayer() = default;
  CrossLayer(const std::string& name, std::size_t dim, std::size_t heads, std::size_t mlp_ratio)
      : ln_s_(name + ".ln_s", dim, true),
        ln_m_(name + ".ln_m", dim, true),
        ln_s2_(name + ".ln_s2", dim, true),
        ln_m2_(name + ".ln_m2", dim, true),
        sem_to_mel_(name + ".sem_to_mel", dim, heads),
        mel_to_sem_(name + ".mel_to_sem", dim, heads),
        mlp_s_(name + ".mlp_s", dim, dim * mlp_ratio),
        mlp_m_(name + ".mlp_m", dim, dim * mlp_ratio) {}

  void init(Rng& rng) {
    sem_to_mel_.init(rng);
    mel_to_sem_.init(rng);
    mlp_s_.init(rng);
    mlp_m_.init(rng);
  }

  void forward(Tensor<T>& s, Tensor<T>& m, Cache* c) const {
    Cache local;
    Cache& k = c != nullptr ? *c : local;
    const bool keep = c != nullptr;
    k.s_n = ln_s_.forward(s, keep ? &k.ln_s : nullptr);
    k.m_n = ln_m_.forward(m, keep ? &k.ln_m : nullptr);
    s += sem_to_mel_.forward(k.s_n, k.m_n, keep ? &k.sm : nullptr);
    m += mel_to_sem_.forward(k.m_n, k.s_n, keep ? &k.ms : nullptr);
    s += mlp_s_.forward(ln_s2_.forward(s, keep ? &k.ln_s2 : nullptr), keep ? &k.mlp_s : nullptr);
    m += mlp_m_.forward(ln_m2_.forward(m, keep ? &k.ln_m2 : nullptr), keep ? &k.mlp_m : nullptr);
  }

  /// gs, gm hold gradients w.r.t. the layer outputs on entry and w.r.t. its
  /// inputs on return.
  void backward(Tensor<T>& gs, Tensor<T>& gm, const Cache& k) {
    gs += ln_s2_.backward(mlp_s_.backward(gs, k.mlp_s), k.ln_s2);
    gm += ln_m2_.backward(mlp_m_.backward(gm, k.mlp_m), k.ln_m2);
    auto a = sem_to_mel_.backward(gs, k.sm);
    auto b = mel_to_sem_.backward(gm, k.ms);
    a.query += b.key_value;
    a.key_value += b.query;
    gs += ln_s_.backward(a.query, k.ln_s);
    gm += ln_m_.backward(a.key_value, k.ln_m);
  }

  void collect(nn::ParamList<T>& out) {
    ln_s_.collect(out);
    ln_m_.collect(out);
    ln_s2_.collect(out);
    ln_m2_.collect(out);
    sem_to_mel_.collect(out);
    mel_to_sem_.collect(out);
    mlp_s_.collect(out);
    mlp_m_.collect(out);
  }

 private:
  nn::LayerNorm<T> ln_s_, ln_m_, ln_s2_, ln_m2_;
  nn::MultiHeadAttention<T> sem_to_mel_, mel_to_sem_;
  nn::Mlp<T> mlp_s_, mlp_m_;
};

/// Prior encoder for accompaniment generation. Inputs are frame-aligned
/// semantic features [F, sem_dim] and a vocal mel [F, bins] (both
/// standardised); outputs are the prior accompaniment mel [F, bins] from a
/// zero-initialised head on the mel stream and a semantic projection
/// [F, sem_dim] from the semantic stream.
template <typename T>
class SagPrior {
 public:
  struct Cache {
    typename nn::Linear<T>::Cache sem_in, mel_in, head, sem_head;
    std::vector<typename CrossLayer<T>::Cache> layers;
    typename nn::LayerNorm<T>::Cache ln_m, ln_s;
    bool valid = false;
  };

  struct Output {
    Tensor<T> prior;
    Tensor<T> semantic;
  };

  SagPrior() = default;
  explicit SagPrior(const SagPriorConfig& cfg)
      : cfg_(cfg),
        sem_in_("sag.sem_in", cfg.sem_dim, cfg.dim),
        mel_in_("sag.mel_in", cfg.bins, cfg.dim),
        ln_m_("sag.final_ln_m", cfg.dim, true),
        ln_s_("sag.final_ln_s", cfg.dim, true),
        head_("sag.head", cfg.dim, cfg.bins),
        sem_head_("sag.sem_head", cfg.dim, cfg.sem_dim) {
    for (std::size_t i = 0; i < cfg.depth; ++i) {
      layers_.emplace_back("sag.layer" + std::to_string(i), cfg.dim, cfg.heads, cfg.mlp_ratio);
    }
  }

  void init(Rng& rng) {
    sem_in_.init(rng);
    mel_in_.init(rng);
    for (auto& l : layers_) l.init(rng);
    head_.zero_init();
    sem_head_.init(rng);
  }

  const SagPriorConfig& config() const { return cfg_; }

  Output forward(const Tensor<T>& sem, const Tensor<T>& mel, Cache* c = nullptr) const {
    nn::expect_matrix(sem, cfg_.sem_dim, "SagPrior semantic input");
    nn::expect_matrix(mel, cfg_.bins, "SagPrior mel input");
    if (sem.rows() != mel.rows()) {
      throw DomainError("SagPrior: semantic and mel frame counts differ (" + std::to_string(sem.rows()) + " vs " +
                        std::to_string(mel.rows()) + ")");
    }
    Cache local;
    Cache& k = c != nullptr ? *c : local;
    const bool keep = c != nullptr;
    const auto pe = nn::positional_encoding<T>(sem.rows(), cfg_.dim);
    Tensor<T> s = sem_in_.forward(sem, keep ? &k.sem_in : nullptr);
    Tensor<T> m = mel_in_.forward(mel, keep ? &k.mel_in : nullptr);
    s += pe;
    m += pe;
    k.layers.resize(keep ? layers_.size() : 0);
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].forward(s, m, keep ? &k.layers[i] : nullptr);
    Output out;
    out.prior = head_.forward(ln_m_.forward(m, keep ? &k.ln_m : nullptr), keep ? &k.head : nullptr);
    out.semantic = sem_head_.forward(ln_s_.forward(s, keep ? &k.ln_s : nullptr), keep ? &k.sem_head : nullptr);
    k.valid = keep;
    nn::check_finite(out.prior, "SagPrior");
    return out;
  }

  /// Gradients flow to parameters only; the inputs are data.
  void backward(const Tensor<T>& g_prior, const Tensor<T>& g_semantic, const Cache& k) {
    nn::require_cache<T>(k.valid, "SagPrior");
    Tensor<T> gm = ln_m_.backward(head_.backward(g_prior, k.head), k.ln_m);
    Tensor<T> gs = ln_s_.backward(sem_head_.backward(g_semantic, k.sem_head), k.ln_s);
    for (std::size_t i = layers_.size(); i-- > 0;) layers_[i].backward(gs, gm, k.layers[i]);
    sem_in_.backward(gs, k.sem_in);
    mel_in_.backward(gm, k.mel_in);
  }

  void collect(nn::ParamList<T>& out) {
    sem_in_.collect(out);
    mel_in_.collect(out);
    for (auto& l : layers_) l.collect(out);
    ln_m_.collect(out);
    ln_s_.collect(out);
    head_.collect(out);
    sem_head_.collect(out);
  }

 private:
  SagPriorConfig cfg_;
  nn::Linear<T> sem_in_, mel_in_;
  std::vector<CrossLayer<T>> layers_;
  nn::LayerNorm<T> ln_m_, ln_s_;
  nn::Linear<T> head_, sem_head_;
};

}  // namespace sqz::models
