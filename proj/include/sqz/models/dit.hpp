#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sqz/nn/layers.hpp"

namespace sqz::models {

using nn::Tensor;

struct DitConfig {
  std::size_t bins = 80;
  std::size_t patch = 4;           // frames per token
  std::size_t cond_channels = 1;   // conditioning planes concatenated with the noisy input
  std::size_t dim = 256;
  std::size_t depth = 8;
  std::size_t heads = 4;
  std::size_t temb_dim = 128;
  std::size_t mlp_ratio = 4;
  /// Adds conditioning plane 0 to the output, so a zero-initialised network
  /// starts out returning its prior.
  bool residual_cond = false;

  std::size_t tokens_for(std::size_t frames) const { return (frames + patch - 1) / patch; }
  std::size_t token_width() const { return (1 + cond_channels) * patch * bins; }
};

inline void to_json(nlohmann::json& j, const DitConfig& c) {
  j = {{"bins", c.bins},   {"patch", c.patch},       {"cond_channels", c.cond_channels},
       {"dim", c.dim},     {"depth", c.depth},       {"heads", c.heads},
       {"temb_dim", c.temb_dim}, {"mlp_ratio", c.mlp_ratio}, {"residual_cond", c.residual_cond}};
}

inline void from_json(const nlohmann::json& j, DitConfig& c) {
  j.at("bins").get_to(c.bins);
  j.at("patch").get_to(c.patch);
  j.at("cond_channels").get_to(c.cond_channels);
  j.at("dim").get_to(c.dim);
  j.at("depth").get_to(c.depth);
  j.at("heads").get_to(c.heads);
  j.at("temb_dim").get_to(c.temb_dim);
  j.at("mlp_ratio").get_to(c.mlp_ratio);
  j.at("residual_cond").get_to(c.residual_cond);
}

/// Transformer block with adaptive layer-norm modulation from a conditioning
/// vector: six per-feature rows (shift, scale, gate for attention and MLP),
/// produced by a zero-initialised projection so the block starts as identity.
template <typename T>
class DitBlock {
 public:
  struct Cache {
    typename nn::Gelu<T>::Cache cond_act;
    typename nn::Linear<T>::Cache ada;
    Tensor<T> mod;
    typename nn::LayerNorm<T>::Cache ln1, ln2;
    Tensor<T> h1, h2;
    typename nn::MultiHeadAttention<T>::Cache attn;
    Tensor<T> attn_out;
    typename nn::Mlp<T>::Cache mlp;
    Tensor<T> mlp_out;
  };

  DitBlock() = default;
  DitBlock(const std::string& name, std::size_t dim, std::size_t heads, std::size_t mlp_ratio)
      : dim_(dim),
        ln1_(name + ".ln1", dim, false),
        ln2_(name + ".ln2", dim, false),
        attn_(name + ".attn", dim, heads),
        mlp_(name + ".mlp", dim, dim * mlp_ratio),
        ada_(name + ".ada", dim, 6 * dim) {}

  void init(Rng& rng) {
    attn_.init(rng);
    mlp_.init(rng);
    ada_.zero_init();
  }

  /// x [tokens, dim], cond [1, dim].
  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& cond, Cache* c) const {
    Cache local;
    Cache& k = c != nullptr ? *c : local;
    const bool keep = c != nullptr;
    k.mod = ada_.forward(nn::Gelu<T>::forward(cond, keep ? &k.cond_act : nullptr), keep ? &k.ada : nullptr);
    const T* mod = k.mod.data();

    k.h1 = ln1_.forward(x, keep ? &k.ln1 : nullptr);
    const Tensor<T> m1 = modulate(k.h1, mod + 0 * dim_, mod + 1 * dim_);
    k.attn_out = attn_.forward(m1, m1, keep ? &k.attn : nullptr);
    Tensor<T> x1 = x;
    add_gated(x1, k.attn_out, mod + 2 * dim_);

    k.h2 = ln2_.forward(x1, keep ? &k.ln2 : nullptr);
    const Tensor<T> m2 = modulate(k.h2, mod + 3 * dim_, mod + 4 * dim_);
    k.mlp_out = mlp_.forward(m2, keep ? &k.mlp : nullptr);
    Tensor<T> y = x1;
    add_gated(y, k.mlp_out, mod + 5 * dim_);
    return y;
  }

  struct Grads {
    Tensor<T> x;
    Tensor<T> cond;
  };

  Grads backward(const Tensor<T>& gy, const Cache& k) {
    const T* mod = k.mod.data();
    Tensor<T> gmod = Tensor<T>::matrix(1, 6 * dim_);
    T* gm = gmod.data();

    // y = x1 + gate2 * mlp(m2)
    Tensor<T> gx1 = gy;
    Tensor<T> gf = gated_backward(gy, k.mlp_out, mod + 5 * dim_, gm + 5 * dim_);
    Tensor<T> gm2 = mlp_.backward(gf, k.mlp);
    Tensor<T> gh2 = modulate_backward(gm2, k.h2, mod + 4 * dim_, gm + 3 * dim_, gm + 4 * dim_);
    gx1 += ln2_.backward(gh2, k.ln2);

    // x1 = x + gate1 * attn(m1, m1)
    Tensor<T> gx = gx1;
    Tensor<T> ga = gated_backward(gx1, k.attn_out, mod + 2 * dim_, gm + 2 * dim_);
    auto attn_g = attn_.backward(ga, k.attn);
    attn_g.query += attn_g.key_value;
    Tensor<T> gh1 = modulate_backward(attn_g.query, k.h1, mod + 1 * dim_, gm + 0 * dim_, gm + 1 * dim_);
    gx += ln1_.backward(gh1, k.ln1);

    Grads g;
    g.x = std::move(gx);
    g.cond = nn::Gelu<T>::backward(ada_.backward(gmod, k.ada), k.cond_act);
    return g;
  }

  void collect(nn::ParamList<T>& out) {
    attn_.collect(out);
    mlp_.collect(out);
    ada_.collect(out);
  }

 private:
  Tensor<T> modulate(const Tensor<T>& h, const T* shift, const T* scale) const {
    Tensor<T> m = h;
    for (std::size_t r = 0; r < h.rows(); ++r) {
      for (std::size_t c = 0; c < dim_; ++c) m.at(r, c) = h.at(r, c) * (T(1) + scale[c]) + shift[c];
    }
    return m;
  }

  Tensor<T> modulate_backward(const Tensor<T>& gm, const Tensor<T>& h, const T* scale, T* gshift, T* gscale) const {
    Tensor<T> gh = gm;
    for (std::size_t r = 0; r < gm.rows(); ++r) {
      for (std::size_t c = 0; c < dim_; ++c) {
        gshift[c] += gm.at(r, c);
        gscale[c] += gm.at(r, c) * h.at(r, c);
        gh.at(r, c) = gm.at(r, c) * (T(1) + scale[c]);
      }
    }
    return gh;
  }

  void add_gated(Tensor<T>& x, const Tensor<T>& a, const T* gate) const {
    for (std::size_t r = 0; r < x.rows(); ++r) {
      for (std::size_t c = 0; c < dim_; ++c) x.at(r, c) += gate[c] * a.at(r, c);
    }
  }

  Tensor<T> gated_backward(const Tensor<T>& g, const Tensor<T>& a, const T* gate, T* ggate) const {
    Tensor<T> ga = g;
    for (std::size_t r = 0; r < g.rows(); ++r) {
      for (std::size_t c = 0; c < dim_; ++c) {
        ggate[c] += g.at(r, c) * a.at(r, c);
        ga.at(r, c) = g.at(r, c) * gate[c];
      }
    }
    return ga;
  }

  std::size_t dim_ = 0;
  nn::LayerNorm<T> ln1_, ln2_;
  nn::MultiHeadAttention<T> attn_;
  nn::Mlp<T> mlp_;
  nn::Linear<T> ada_;
};

/// Diffusion transformer over mel frames. The noisy input and conditioning
/// planes are cut into patches of `patch` frames x `bins`, embedded as tokens,
/// and the noise level enters through a sinusoidal embedding of log(delta)/4
/// that drives every block's adaptive norm. The output is the x0 estimate.
///
/// The noisy input is scaled by 1/sqrt(1 + delta^2), which keeps token
/// magnitudes bounded for unit-variance data at any noise level.
template <typename T>
class Dit {
 public:
  struct Cache {
    std::size_t frames = 0;
    T in_scale = T(1);
    typename nn::Linear<T>::Cache embed, t1, t2, final_ada, out;
    typename nn::Gelu<T>::Cache t_act, final_act;
    Tensor<T> cond_vec;
    std::vector<typename DitBlock<T>::Cache> blocks;
    typename nn::LayerNorm<T>::Cache final_ln;
    Tensor<T> final_normed;
    Tensor<T> final_mod;
    bool valid = false;
  };

  Dit() = default;
  explicit Dit(const DitConfig& cfg)
      : cfg_(cfg),
        embed_("embed", cfg.token_width(), cfg.dim),
        t1_("temb.fc1", cfg.temb_dim, cfg.dim),
        t2_("temb.fc2", cfg.dim, cfg.dim),
        final_ln_("final.ln", cfg.dim, false),
        final_ada_("final.ada", cfg.dim, 2 * cfg.dim),
        out_("final.out", cfg.dim, cfg.patch * cfg.bins) {
    for (std::size_t i = 0; i < cfg.depth; ++i) {
      blocks_.emplace_back("block" + std::to_string(i), cfg.dim, cfg.heads, cfg.mlp_ratio);
    }
  }

  void init(Rng& rng) {
    embed_.init(rng);
    t1_.init(rng);
    t2_.init(rng);
    for (auto& b : blocks_) b.init(rng);
    final_ada_.zero_init();
    out_.zero_init();
  }

  const DitConfig& config() const { return cfg_; }

  /// x [frames, bins]; conds holds cond_channels tensors of the same shape.
  Tensor<T> forward(const Tensor<T>& x, const std::vector<Tensor<T>>& conds, double delta, Cache* c = nullptr) const {
    nn::expect_matrix(x, cfg_.bins, "Dit input");
    nn::expect_dim(conds.size(), cfg_.cond_channels, "Dit", "conditioning channel count");
    for (const auto& cd : conds) {
      nn::expect_matrix(cd, cfg_.bins, "Dit conditioning");
      nn::expect_dim(cd.rows(), x.rows(), "Dit conditioning", "frame count");
    }
    if (!(delta > 0.0)) throw DomainError("Dit: noise level must be positive");
    Cache local;
    Cache& k = c != nullptr ? *c : local;
    const bool keep = c != nullptr;
    k.frames = x.rows();
    k.in_scale = static_cast<T>(1.0 / std::sqrt(1.0 + delta * delta));

    Tensor<T> h = embed_.forward(patchify(x, conds, k.in_scale), keep ? &k.embed : nullptr);
    const auto pe = nn::positional_encoding<T>(h.rows(), cfg_.dim);
    h += pe;

    auto temb = nn::sinusoidal_embedding<T>(std::log(delta) / 4.0, cfg_.temb_dim);
    auto tc = nn::Gelu<T>::forward(t1_.forward(temb, keep ? &k.t1 : nullptr), keep ? &k.t_act : nullptr);
    k.cond_vec = t2_.forward(tc, keep ? &k.t2 : nullptr);

    k.blocks.resize(keep ? blocks_.size() : 0);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      h = blocks_[i].forward(h, k.cond_vec, keep ? &k.blocks[i] : nullptr);
    }

    k.final_mod = final_ada_.forward(nn::Gelu<T>::forward(k.cond_vec, keep ? &k.final_act : nullptr),
                                     keep ? &k.final_ada : nullptr);
    k.final_normed = final_ln_.forward(h, keep ? &k.final_ln : nullptr);
    Tensor<T> m = k.final_normed;
    const T* shift = k.final_mod.data();
    const T* scale = k.final_mod.data() + cfg_.dim;
    for (std::size_t r = 0; r < m.rows(); ++r) {
      for (std::size_t col = 0; col < cfg_.dim; ++col) m.at(r, col) = m.at(r, col) * (T(1) + scale[col]) + shift[col];
    }
    Tensor<T> y = depatchify(out_.forward(m, keep ? &k.out : nullptr), x.rows());
    if (cfg_.residual_cond) y += conds[0];
    k.valid = keep;
    nn::check_finite(y, "Dit");
    return y;
  }

  struct Grads {
    Tensor<T> x;
    std::vector<Tensor<T>> conds;
  };

  Grads backward(const Tensor<T>& gy, const Cache& k) {
    nn::require_cache<T>(k.valid, "Dit");
    nn::expect_matrix(gy, cfg_.bins, "Dit backward");
    Tensor<T> gout = out_.backward(patchify_output_grad(gy), k.out);

    Tensor<T> gfmod = Tensor<T>::matrix(1, 2 * cfg_.dim);
    const T* scale = k.final_mod.data() + cfg_.dim;
    Tensor<T> gnormed = gout;
    for (std::size_t r = 0; r < gout.rows(); ++r) {
      for (std::size_t col = 0; col < cfg_.dim; ++col) {
        gfmod[col] += gout.at(r, col);
        gfmod[cfg_.dim + col] += gout.at(r, col) * k.final_normed.at(r, col);
        gnormed.at(r, col) = gout.at(r, col) * (T(1) + scale[col]);
      }
    }
    Tensor<T> gcond = nn::Gelu<T>::backward(final_ada_.backward(gfmod, k.final_ada), k.final_act);
    Tensor<T> gh = final_ln_.backward(gnormed, k.final_ln);

    for (std::size_t i = blocks_.size(); i-- > 0;) {
      auto g = blocks_[i].backward(gh, k.blocks[i]);
      gh = std::move(g.x);
      gcond += g.cond;
    }
    t1_.backward(nn::Gelu<T>::backward(t2_.backward(gcond, k.t2), k.t_act), k.t1);

    Tensor<T> gtokens = embed_.backward(gh, k.embed);
    Grads g = unpatchify_input_grad(gtokens, k.frames, k.in_scale);
    if (cfg_.residual_cond) g.conds[0] += gy;
    return g;
  }

  void collect(nn::ParamList<T>& out) {
    embed_.collect(out);
    t1_.collect(out);
    t2_.collect(out);
    for (auto& b : blocks_) b.collect(out);
    final_ada_.collect(out);
    out_.collect(out);
  }

 private:
  Tensor<T> patchify(const Tensor<T>& x, const std::vector<Tensor<T>>& conds, T in_scale) const {
    const std::size_t frames = x.rows();
    const std::size_t n = cfg_.tokens_for(frames);
    const std::size_t plane = cfg_.patch * cfg_.bins;
    Tensor<T> tok = Tensor<T>::matrix(n, cfg_.token_width());
    for (std::size_t ch = 0; ch <= cfg_.cond_channels; ++ch) {
      const Tensor<T>& src = ch == 0 ? x : conds[ch - 1];
      const T s = ch == 0 ? in_scale : T(1);
      for (std::size_t f = 0; f < frames; ++f) {
        T* dst = tok.data() + (f / cfg_.patch) * cfg_.token_width() + ch * plane + (f % cfg_.patch) * cfg_.bins;
        for (std::size_t b = 0; b < cfg_.bins; ++b) dst[b] = s * src.at(f, b);
      }
    }
    return tok;
  }

  Tensor<T> depatchify(const Tensor<T>& tok, std::size_t frames) const {
    Tensor<T> y = Tensor<T>::matrix(frames, cfg_.bins);
    for (std::size_t f = 0; f < frames; ++f) {
      const T* src = tok.data() + (f / cfg_.patch) * tok.cols() + (f % cfg_.patch) * cfg_.bins;
      std::copy_n(src, cfg_.bins, y.data() + f * cfg_.bins);
    }
    return y;
  }

  Tensor<T> patchify_output_grad(const Tensor<T>& gy) const {
    const std::size_t frames = gy.rows();
    Tensor<T> g = Tensor<T>::matrix(cfg_.tokens_for(frames), cfg_.patch * cfg_.bins);
    for (std::size_t f = 0; f < frames; ++f) {
      std::copy_n(gy.data() + f * cfg_.bins, cfg_.bins,
                  g.data() + (f / cfg_.patch) * g.cols() + (f % cfg_.patch) * cfg_.bins);
    }
    return g;
  }

  Grads unpatchify_input_grad(const Tensor<T>& gtok, std::size_t frames, T in_scale) const {
    Grads g;
    const std::size_t plane = cfg_.patch * cfg_.bins;
    for (std::size_t ch = 0; ch <= cfg_.cond_channels; ++ch) {
      Tensor<T> gc = Tensor<T>::matrix(frames, cfg_.bins);
      const T s = ch == 0 ? in_scale : T(1);
      for (std::size_t f = 0; f < frames; ++f) {
        const T* src = gtok.data() + (f / cfg_.patch) * cfg_.token_width() + ch * plane + (f % cfg_.patch) * cfg_.bins;
        for (std::size_t b = 0; b < cfg_.bins; ++b) gc.at(f, b) = s * src[b];
      }
      if (ch == 0) {
        g.x = std::move(gc);
      } else {
        g.conds.push_back(std::move(gc));
      }
    }
    return g;
  }

  DitConfig cfg_;
  nn::Linear<T> embed_, t1_, t2_;
  std::vector<DitBlock<T>> blocks_;
  nn::LayerNorm<T> final_ln_;
  nn::Linear<T> final_ada_, out_;
};

}  // namespace sqz::models
