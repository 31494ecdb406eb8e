// Copyright 2026 The Weave Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "weave/autodiff.hpp"
#include "weave/codec.hpp"
#include "weave/conditioning.hpp"
#include "weave/rng.hpp"
#include "weave/tensor.hpp"

namespace weave {

// Per-call denoiser inputs besides x_t and t.
template <typename T>
struct Conditioning {
  Tensor<T> depth;                // (1, h, w) at latent resolution
  std::vector<Tensor<T>> tokens;  // (K, d_f) per instance
  std::vector<Tensor<T>> masks;   // (1, H, W) per instance, H >= h
  Tensor<T> source;               // (4, h, w) super-resolution source latent
};

struct UNetConfig {
  int latent_channels = LatentCodec::kLatentChannels;
  int width = 32;
  int levels = 3;
  int time_dim = 32;
  int attn_dim = 32;
  int token_dim = kRefTokenDim;
  bool use_depth = true;
  bool use_source = false;
  bool cross_attention = true;
  bool mask_normalize = false;

  int cond_channels() const { return (use_depth ? 1 : 0) + (use_source ? latent_channels : 0); }
  int in_channels() const { return latent_channels + cond_channels(); }
  void validate() const {
    if (levels < 1 || width < 1 || time_dim < 2 || time_dim % 2 || attn_dim < 1 || token_dim < 1)
      throw Error("unet: invalid architecture config");
  }
  friend bool operator==(const UNetConfig&, const UNetConfig&) = default;
};

struct WeightSpec {
  std::string name;
  std::vector<int> shape;
  bool lora_target = false;  // rank-2 projection/conv weight
  double init_scale = 1.0;
};

inline std::vector<WeightSpec> unet_weight_specs(const UNetConfig& c) {
  c.validate();
  const int W = c.width;
  std::vector<WeightSpec> s;
  auto mat = [&](const std::string& n, int rows, int cols, double scale = 1.0) { s.push_back({n, {rows, cols}, true, scale}); };
  auto bias = [&](const std::string& n, int len) { s.push_back({n, {len}, false, 0.0}); };
  auto res_block = [&](const std::string& n) {
    mat(n + ".conv1.w", W, W * 9);
    bias(n + ".conv1.b", W);
    mat(n + ".temb.w", W, W);
    bias(n + ".temb.b", W);
    mat(n + ".conv2.w", W, W * 9, 0.2);
    bias(n + ".conv2.b", W);
  };
  auto attn = [&](int l) {
    const std::string n = "attn" + std::to_string(l);
    mat(n + ".q", W, c.attn_dim);
    mat(n + ".k", c.token_dim, c.attn_dim);
    mat(n + ".v", c.token_dim, W);
    mat(n + ".o", W, W, 0.2);
    bias(n + ".o_b", W);
  };
  mat("time.w", c.time_dim, W);
  bias("time.b", W);
  mat("conv_in.w", W, c.in_channels() * 9);
  bias("conv_in.b", W);
  for (int l = 0; l + 1 < c.levels; ++l) {
    res_block("down" + std::to_string(l));
    if (c.cross_attention) attn(l);
  }
  res_block("mid");
  if (c.cross_attention) attn(c.levels - 1);
  for (int l = c.levels - 2; l >= 0; --l) res_block("up" + std::to_string(l));
  mat("conv_out.w", c.latent_channels, W * 9, 0.1);
  bias("conv_out.b", c.latent_channels);
  return s;
}

// Sinusoidal embedding of t (scaled to [0, 1000]), shape (1, dim).
template <typename T>
Tensor<T> time_embedding(double t, int dim) {
  Tensor<T> e({1, dim});
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(1000.0) * i / half);
    e[static_cast<std::size_t>(i)] = static_cast<T>(std::sin(1000.0 * t * freq));
    e[static_cast<std::size_t>(half + i)] = static_cast<T>(std::cos(1000.0 * t * freq));
  }
  return e;
}

// Weights of the toy encoder-decoder denoiser as one flat vector in
// declaration order.
template <typename T>
class UNetWeights {
 public:
  UNetWeights() = default;
  explicit UNetWeights(const UNetConfig& cfg) : cfg_(cfg), specs_(unet_weight_specs(cfg)) {
    std::size_t off = 0;
    for (const auto& s : specs_) {
      offsets_.push_back(off);
      off += Tensor<T>::count(s.shape);
    }
    params_.assign(off, T(0));
  }

  static UNetWeights initialized(const UNetConfig& cfg, std::uint64_t seed) {
    UNetWeights w(cfg);
    Rng rng(derive_seed(seed, 0x756e6574ull));
    for (std::size_t i = 0; i < w.specs_.size(); ++i) {
      const auto& s = w.specs_[i];
      if (s.shape.size() != 2) continue;
      const double std = s.init_scale / std::sqrt(static_cast<double>(s.shape[1]));
      // conv weights are (out, in*9): fan-in is the second dim. Linear maps
      // are (in, out): fan-in is the first dim.
      const bool conv = s.name.find("conv") != std::string::npos;
      const double sd = conv ? std : s.init_scale / std::sqrt(static_cast<double>(s.shape[0]));
      T* p = w.params_.data() + w.offsets_[i];
      for (std::size_t k = 0; k < Tensor<T>::count(s.shape); ++k) p[k] = static_cast<T>(sd * rng.normal());
    }
    return w;
  }

  const UNetConfig& config() const { return cfg_; }
  const std::vector<WeightSpec>& specs() const { return specs_; }
  std::size_t count() const { return specs_.size(); }
  std::size_t offset(std::size_t i) const { return offsets_[i]; }
  std::span<T> params() { return params_; }
  std::span<const T> params() const { return params_; }
  Tensor<T> tensor(std::size_t i) const {
    const auto& s = specs_[i].shape;
    const auto b = params_.begin() + static_cast<std::ptrdiff_t>(offsets_[i]);
    return Tensor<T>(s, std::vector<T>(b, b + static_cast<std::ptrdiff_t>(Tensor<T>::count(s))));
  }
  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < specs_.size(); ++i)
      if (specs_[i].name == name) return i;
    throw Error(str_cat("unet: no weight named ", name));
  }

  bool pretrained = false;

  friend bool operator==(const UNetWeights& a, const UNetWeights& b) { return a.cfg_ == b.cfg_ && a.params_ == b.params_; }

 private:
  UNetConfig cfg_;
  std::vector<WeightSpec> specs_;
  std::vector<std::size_t> offsets_;
  std::vector<T> params_;
};

// Low-rank deltas W + B A on every rank-2 weight. A: (r, cols), B: (rows, r);
// B starts at zero so the initial delta is exactly zero.
template <typename T>
class LoraDeltas {
 public:
  LoraDeltas() = default;
  LoraDeltas(const UNetWeights<T>& base, int rank) : rank_(rank) {
    if (rank < 1) throw Error("lora: rank must be >= 1");
    std::size_t off = 0;
    for (std::size_t i = 0; i < base.count(); ++i) {
      const auto& s = base.specs()[i];
      if (!s.lora_target) continue;
      Target t{i, s.shape[0], s.shape[1], off, 0};
      off += static_cast<std::size_t>(rank) * t.cols;
      t.b_off = off;
      off += static_cast<std::size_t>(t.rows) * rank;
      targets_.push_back(t);
    }
    params_.assign(off, T(0));
  }

  static LoraDeltas initialized(const UNetWeights<T>& base, int rank, std::uint64_t seed) {
    LoraDeltas d(base, rank);
    Rng rng(derive_seed(seed, 0x6c6f7261ull));
    for (const auto& t : d.targets_) {
      const double sd = 1.0 / std::sqrt(static_cast<double>(t.cols));
      for (std::size_t k = 0; k < static_cast<std::size_t>(rank) * t.cols; ++k) d.params_[t.a_off + k] = static_cast<T>(sd * rng.normal());
    }
    return d;
  }

  struct Target {
    std::size_t weight;  // index into the base weights
    int rows, cols;
    std::size_t a_off, b_off;
  };

  int rank() const { return rank_; }
  const std::vector<Target>& targets() const { return targets_; }
  std::span<T> params() { return params_; }
  std::span<const T> params() const { return params_; }
  Tensor<T> a(std::size_t j) const { return slice(targets_[j].a_off, {rank_, targets_[j].cols}); }
  Tensor<T> b(std::size_t j) const { return slice(targets_[j].b_off, {targets_[j].rows, rank_}); }

  friend bool operator==(const LoraDeltas& x, const LoraDeltas& y) { return x.rank_ == y.rank_ && x.params_ == y.params_; }

 private:
  Tensor<T> slice(std::size_t off, std::vector<int> shape) const {
    const auto b = params_.begin() + static_cast<std::ptrdiff_t>(off);
    const auto n = static_cast<std::ptrdiff_t>(Tensor<T>::count(shape));
    return Tensor<T>(std::move(shape), std::vector<T>(b, b + n));
  }

  int rank_ = 0;
  std::vector<Target> targets_;
  std::vector<T> params_;
};

// Tape handles for one forward pass.
template <typename T>
struct UNetVars {
  std::vector<typename Tape<T>::Var> weights;  // effective weights, declaration order
  std::vector<typename Tape<T>::Var> base;     // base weight leaves
  std::vector<typename Tape<T>::Var> lora_a, lora_b;
};

template <typename T>
UNetVars<T> make_unet_vars(Tape<T>& tp, const UNetWeights<T>& w, const LoraDeltas<T>* lora, bool train_base, bool train_lora) {
  UNetVars<T> v;
  for (std::size_t i = 0; i < w.count(); ++i) {
    v.base.push_back(train_base ? tp.param(w.tensor(i)) : tp.constant(w.tensor(i)));
    v.weights.push_back(v.base.back());
  }
  if (lora) {
    for (std::size_t j = 0; j < lora->targets().size(); ++j) {
      const auto& t = lora->targets()[j];
      v.lora_a.push_back(train_lora ? tp.param(lora->a(j)) : tp.constant(lora->a(j)));
      v.lora_b.push_back(train_lora ? tp.param(lora->b(j)) : tp.constant(lora->b(j)));
      v.weights[t.weight] = ops::add(tp, v.base[t.weight], ops::matmul(tp, v.lora_b.back(), v.lora_a.back()));
    }
  }
  return v;
}

// Encoder-decoder denoiser: conv_in, per level a residual block plus masked
// cross-attention, average-pool down, nearest up with additive skips,
// conv_out. Predicts noise with the latent's shape.
template <typename T>
typename Tape<T>::Var unet_forward(Tape<T>& tp, const UNetWeights<T>& w, const UNetVars<T>& v, const Tensor<T>& x_t, double t,
                                   const Conditioning<T>& cond) {
  using Var = typename Tape<T>::Var;
  const UNetConfig& c = w.config();
  if (x_t.rank() != 3 || x_t.dim(0) != c.latent_channels)
    throw Error(str_cat("unet: expected a ", c.latent_channels, "-channel latent, got ", shape_string(x_t)));
  const int h = x_t.dim(1), wd = x_t.dim(2);
  const int factor = 1 << (c.levels - 1);
  if (h % factor || wd % factor) throw Error(str_cat("unet: latent size must be divisible by ", factor));
  auto W = [&](const std::string& name) { return v.weights[w.index_of(name)]; };

  std::vector<Var> inputs{tp.constant(x_t)};
  if (c.use_depth) {
    if (cond.depth.size() != static_cast<std::size_t>(h) * wd) throw Error("unet: depth map does not match latent size");
    inputs.push_back(tp.constant(cond.depth.reshaped({1, h, wd})));
  }
  if (c.use_source) {
    if (!cond.source.same_shape(x_t)) throw Error("unet: source latent does not match x_t");
    inputs.push_back(tp.constant(cond.source));
  }

  const Var temb = ops::silu(tp, ops::add_row_bias(tp, ops::matmul(tp, tp.constant(time_embedding<T>(t, c.time_dim)), W("time.w")),
                                                   W("time.b")));

  std::vector<Var> tokens;
  if (c.cross_attention)
    for (const auto& tk : cond.tokens) tokens.push_back(tp.constant(tk));
  if (c.cross_attention && cond.masks.size() != cond.tokens.size())
    throw Error(str_cat("unet: ", cond.masks.size(), " masks for ", cond.tokens.size(), " reference token sets"));

  auto res_block = [&](Var x, const std::string& n) {
    Var r = ops::conv2d(tp, ops::silu(tp, x), W(n + ".conv1.w"), W(n + ".conv1.b"), 3);
    const Var tb = ops::add_row_bias(tp, ops::matmul(tp, temb, W(n + ".temb.w")), W(n + ".temb.b"));
    r = ops::add_channel_bias(tp, r, tb);
    r = ops::conv2d(tp, ops::silu(tp, r), W(n + ".conv2.w"), W(n + ".conv2.b"), 3);
    return ops::add(tp, x, r);
  };
  auto attention = [&](Var x, int level) {
    if (!c.cross_attention || tokens.empty()) return x;
    const std::string n = "attn" + std::to_string(level);
    const auto& xs = tp.value(x);
    const int C = xs.dim(0), H = xs.dim(1), Wd = xs.dim(2), S = H * Wd;
    std::vector<Tensor<T>> masks;
    for (const auto& m : cond.masks) masks.push_back(resample_mask(m, H, Wd).mask);
    const Var z = ops::transpose(tp, ops::reshape(tp, x, {C, S}));
    const Var att = ops::masked_cross_attention(tp, z, tokens, masks, W(n + ".q"), W(n + ".k"), W(n + ".v"), c.mask_normalize);
    const Var o = ops::add_row_bias(tp, ops::matmul(tp, att, W(n + ".o")), W(n + ".o_b"));
    return ops::add(tp, x, ops::reshape(tp, ops::transpose(tp, o), {C, H, Wd}));
  };

  Var x = ops::conv2d(tp, inputs.size() == 1 ? inputs[0] : ops::concat_channels(tp, inputs), W("conv_in.w"), W("conv_in.b"), 3);
  std::vector<Var> skips;
  for (int l = 0; l + 1 < c.levels; ++l) {
    x = attention(res_block(x, "down" + std::to_string(l)), l);
    skips.push_back(x);
    x = ops::avgpool2(tp, x);
  }
  x = attention(res_block(x, "mid"), c.levels - 1);
  for (int l = c.levels - 2; l >= 0; --l) {
    x = ops::add(tp, ops::upsample2(tp, x), skips[static_cast<std::size_t>(l)]);
    x = res_block(x, "up" + std::to_string(l));
  }
  return ops::conv2d(tp, ops::silu(tp, x), W("conv_out.w"), W("conv_out.b"), 3);
}

}  // namespace weave
