// Copyright 2026 The Weave Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "weave/conditioning.hpp"
#include "weave/schedule.hpp"
#include "weave/unet.hpp"

namespace weave {

// eps_hat(x_t; t, conditioning).
template <typename T>
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  virtual Tensor<T> predict(const Tensor<T>& x_t, double t, const Conditioning<T>& c) const = 0;
};

// A predictor with learnable adapter parameters phi.
template <typename T>
class AdaptablePredictor : public NoisePredictor<T> {
 public:
  // Given the prediction, upstream returns d(loss)/d(prediction).
  using Upstream = std::function<Tensor<T>(const Tensor<T>& prediction)>;

  virtual std::span<T> adapter_params() = 0;
  virtual std::span<const T> adapter_params() const = 0;

  // Returns the prediction and accumulates d(loss)/d(phi) into grad.
  virtual Tensor<T> predict_vjp(const Tensor<T>& x_t, double t, const Conditioning<T>& c, const Upstream& upstream,
                                std::span<T> grad) const = 0;
};

// ---------------------------------------------------------------------------
// Toy UNet teacher, adapter and super-resolution denoiser

// Frozen depth + reference conditioned denoiser.
template <typename T>
class TeacherModel : public NoisePredictor<T> {
 public:
  explicit TeacherModel(std::shared_ptr<const UNetWeights<T>> w) : w_(std::move(w)) {}

  Tensor<T> predict(const Tensor<T>& x_t, double t, const Conditioning<T>& c) const override {
    if (!w_ || !w_->pretrained) throw Error("predict_noise: uninitialized teacher (weights were never pretrained or loaded)");
    Tape<T> tp;
    const auto v = make_unet_vars<T>(tp, *w_, nullptr, false, false);
    return tp.value(unet_forward(tp, *w_, v, x_t, t, c));
  }

  const UNetWeights<T>& weights() const { return *w_; }
  std::shared_ptr<const UNetWeights<T>> shared_weights() const { return w_; }

 private:
  std::shared_ptr<const UNetWeights<T>> w_;
};

// Learnable low-rank copy of the teacher; phi are the deltas only.
template <typename T>
class AdapterModel : public AdaptablePredictor<T> {
 public:
  AdapterModel(std::shared_ptr<const UNetWeights<T>> base, int rank, std::uint64_t seed)
      : base_(std::move(base)), lora_(LoraDeltas<T>::initialized(*base_, rank, seed)) {}
  AdapterModel(std::shared_ptr<const UNetWeights<T>> base, LoraDeltas<T> lora) : base_(std::move(base)), lora_(std::move(lora)) {}

  Tensor<T> predict(const Tensor<T>& x_t, double t, const Conditioning<T>& c) const override {
    check();
    Tape<T> tp;
    const auto v = make_unet_vars(tp, *base_, &lora_, false, false);
    return tp.value(unet_forward(tp, *base_, v, x_t, t, c));
  }

  Tensor<T> predict_vjp(const Tensor<T>& x_t, double t, const Conditioning<T>& c, const typename AdaptablePredictor<T>::Upstream& up,
                        std::span<T> grad) const override {
    check();
    if (grad.size() != lora_.params().size()) throw Error("adapter: gradient buffer size mismatch");
    Tape<T> tp;
    const auto v = make_unet_vars(tp, *base_, &lora_, false, true);
    const auto out = unet_forward(tp, *base_, v, x_t, t, c);
    Tensor<T> pred = tp.value(out);
    tp.backward(out, up(pred));
    for (std::size_t j = 0; j < lora_.targets().size(); ++j) {
      const auto& tg = lora_.targets()[j];
      const Tensor<T> ga = tp.grad(v.lora_a[j]);
      const Tensor<T> gb = tp.grad(v.lora_b[j]);
      for (std::size_t k = 0; k < ga.size(); ++k) grad[tg.a_off + k] += ga[k];
      for (std::size_t k = 0; k < gb.size(); ++k) grad[tg.b_off + k] += gb[k];
    }
    return pred;
  }

  std::span<T> adapter_params() override { return lora_.params(); }
  std::span<const T> adapter_params() const override { return lora_.params(); }
  const LoraDeltas<T>& deltas() const { return lora_; }
  LoraDeltas<T>& deltas() { return lora_; }
  const UNetWeights<T>& base() const { return *base_; }

 private:
  void check() const {
    if (!base_ || !base_->pretrained) throw Error("predict_noise: uninitialized teacher behind adapter");
  }
  std::shared_ptr<const UNetWeights<T>> base_;
  LoraDeltas<T> lora_;
};

// Frozen super-resolution denoiser, conditioned on the source latent.
template <typename T>
class SRModel : public NoisePredictor<T> {
 public:
  explicit SRModel(std::shared_ptr<const UNetWeights<T>> w) : w_(std::move(w)) {
    if (w_ && (!w_->config().use_source || w_->config().cross_attention))
      throw Error("sr model: expects source conditioning without cross-attention");
  }

  Tensor<T> predict(const Tensor<T>& x_t, double t, const Conditioning<T>& c) const override {
    if (!w_ || !w_->pretrained) throw Error("predict_noise_sr: uninitialized super-resolution model");
    Conditioning<T> sc;
    sc.source = c.source;
    Tape<T> tp;
    const auto v = make_unet_vars<T>(tp, *w_, nullptr, false, false);
    return tp.value(unet_forward(tp, *w_, v, x_t, t, sc));
  }

  const UNetWeights<T>& weights() const { return *w_; }

 private:
  std::shared_ptr<const UNetWeights<T>> w_;
};

inline UNetConfig teacher_config(int width = 32) {
  UNetConfig c;
  c.width = width;
  c.use_depth = true;
  c.cross_attention = true;
  return c;
}

inline UNetConfig sr_config(int width = 32) {
  UNetConfig c;
  c.width = width;
  c.use_depth = false;
  c.use_source = true;
  c.cross_attention = false;
  return c;
}

// ---------------------------------------------------------------------------
// Analytic Gaussian oracle

// Exact noise predictor for data ~ N(mu, sigma^2 I):
// eps_hat = sigma_t (x_t - alpha_t mu) / (alpha_t^2 sigma^2 + sigma_t^2).
template <typename T>
class GaussianTeacher : public NoisePredictor<T> {
 public:
  GaussianTeacher(Tensor<T> mu, double sigma, NoiseSchedule sched = {}) : mu_(std::move(mu)), sigma_(sigma), sched_(sched) {}

  Tensor<T> predict(const Tensor<T>& x_t, double t, const Conditioning<T>&) const override {
    return gaussian_eps(x_t, t, mu_, nullptr);
  }

  const Tensor<T>& mu() const { return mu_; }
  double sigma() const { return sigma_; }

 protected:
  Tensor<T> gaussian_eps(const Tensor<T>& x_t, double t, const Tensor<T>& mu, const std::vector<T>* delta) const {
    NoiseSchedule::check(t);
    if (!x_t.same_shape(mu_)) throw Error("gaussian teacher: x_t shape does not match mu");
    const double a = sched_.alpha(t), s = sched_.sigma(t);
    const double var = a * a * sigma_ * sigma_ + s * s;
    Tensor<T> out(x_t.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double m = static_cast<double>(mu[i]) + (delta ? static_cast<double>((*delta)[i]) : 0.0);
      out[i] = static_cast<T>(s * (static_cast<double>(x_t[i]) - a * m) / var);
    }
    return out;
  }

  Tensor<T> mu_;
  double sigma_;
  NoiseSchedule sched_;
};

// Adapter for the Gaussian oracle: same closed form with the mean shifted by
// learnable per-element deltas phi (zero deltas reproduce the teacher).
template <typename T>
class GaussianAdapter : public AdaptablePredictor<T> {
 public:
  GaussianAdapter(Tensor<T> mu, double sigma, NoiseSchedule sched = {})
      : oracle_(std::move(mu), sigma, sched), delta_(oracle_.mu().size(), T(0)), sched_(sched) {}

  Tensor<T> predict(const Tensor<T>& x_t, double t, const Conditioning<T>&) const override {
    return oracle_.eval(x_t, t, &delta_);
  }

  Tensor<T> predict_vjp(const Tensor<T>& x_t, double t, const Conditioning<T>&, const typename AdaptablePredictor<T>::Upstream& up,
                        std::span<T> grad) const override {
    Tensor<T> pred = oracle_.eval(x_t, t, &delta_);
    const Tensor<T> g = up(pred);
    const double a = sched_.alpha(t), s = sched_.sigma(t);
    const double d = -s * a / (a * a * oracle_.sigma() * oracle_.sigma() + s * s);
    for (std::size_t i = 0; i < g.size(); ++i) grad[i] += static_cast<T>(d) * g[i];
    return pred;
  }

  std::span<T> adapter_params() override { return delta_; }
  std::span<const T> adapter_params() const override { return delta_; }

 private:
  struct Oracle : GaussianTeacher<T> {
    using GaussianTeacher<T>::GaussianTeacher;
    Tensor<T> eval(const Tensor<T>& x_t, double t, const std::vector<T>* delta) const {
      return this->gaussian_eps(x_t, t, this->mu_, delta);
    }
  };
  Oracle oracle_;
  std::vector<T> delta_;
  NoiseSchedule sched_;
};

// ---------------------------------------------------------------------------
// Noise-level instance masking (the feature-mask ablation)

namespace detail {

template <typename T>
Conditioning<T> single_reference(const Conditioning<T>& c, std::size_t i) {
  Conditioning<T> s;
  s.depth = c.depth;
  s.source = c.source;
  s.tokens = {c.tokens[i]};
  s.masks = {Tensor<T>(c.masks[i].shape(), T(1))};
  return s;
}

template <typename T>
std::vector<Tensor<T>> latent_masks(const Conditioning<T>& c, const Tensor<T>& x_t) {
  std::vector<Tensor<T>> m;
  for (const auto& mask : c.masks) m.push_back(resample_mask(mask, x_t.dim(1), x_t.dim(2)).mask);
  return m;
}

}  // namespace detail

// eps = (1/N) sum_i m_i * inner(x_t; reference i alone, unmasked).
template <typename T>
class NoiseMaskedPredictor : public NoisePredictor<T> {
 public:
  explicit NoiseMaskedPredictor(const NoisePredictor<T>& inner) : inner_(inner) {}

  Tensor<T> predict(const Tensor<T>& x_t, double t, const Conditioning<T>& c) const override {
    std::vector<Tensor<T>> eps;
    for (std::size_t i = 0; i < c.tokens.size(); ++i) eps.push_back(inner_.predict(x_t, t, detail::single_reference(c, i)));
    return noise_level_masking(eps, detail::latent_masks(c, x_t));
  }

 private:
  const NoisePredictor<T>& inner_;
};

template <typename T>
class NoiseMaskedAdaptable : public AdaptablePredictor<T> {
 public:
  explicit NoiseMaskedAdaptable(AdaptablePredictor<T>& inner) : inner_(inner) {}

  Tensor<T> predict(const Tensor<T>& x_t, double t, const Conditioning<T>& c) const override {
    return NoiseMaskedPredictor<T>(inner_).predict(x_t, t, c);
  }

  Tensor<T> predict_vjp(const Tensor<T>& x_t, double t, const Conditioning<T>& c, const typename AdaptablePredictor<T>::Upstream& up,
                        std::span<T> grad) const override {
    const auto masks = detail::latent_masks(c, x_t);
    const Tensor<T> pred = predict(x_t, t, c);
    const Tensor<T> g = up(pred);
    const int C = g.dim(0);
    const std::size_t plane = g.size() / static_cast<std::size_t>(C);
    const T inv = T(1) / static_cast<T>(masks.size());
    for (std::size_t i = 0; i < masks.size(); ++i) {
      Tensor<T> gi(g.shape());
      for (int ch = 0; ch < C; ++ch)
        for (std::size_t p = 0; p < plane; ++p) gi[ch * plane + p] = inv * masks[i][p] * g[ch * plane + p];
      inner_.predict_vjp(x_t, t, detail::single_reference(c, i), [&gi](const Tensor<T>&) { return gi; }, grad);
    }
    return pred;
  }

  std::span<T> adapter_params() override { return inner_.adapter_params(); }
  std::span<const T> adapter_params() const override { return std::as_const(inner_).adapter_params(); }

 private:
  AdaptablePredictor<T>& inner_;
};

// ---------------------------------------------------------------------------
// WMDL1 checkpoints: magic "WMDL1", uint32 kind (0 = full weights,
// 1 = low-rank deltas), int32 architecture block (latent_channels, width,
// levels, time_dim, attn_dim, token_dim, use_depth, use_source,
// cross_attention, mask_normalize, pretrained, lora_rank), uint32 block
// count, then per block: uint32 rank, int32 dims, float32 values.

namespace detail {

inline void write_arch(std::ostream& os, std::uint32_t kind, const UNetConfig& c, bool pretrained, int rank) {
  os.write("WMDL1", 5);
  os.write(reinterpret_cast<const char*>(&kind), 4);
  const std::int32_t a[12] = {c.latent_channels, c.width, c.levels, c.time_dim, c.attn_dim, c.token_dim, c.use_depth, c.use_source,
                              c.cross_attention, c.mask_normalize, pretrained, rank};
  os.write(reinterpret_cast<const char*>(a), sizeof a);
}

inline std::uint32_t read_arch(std::istream& is, UNetConfig& c, bool& pretrained, int& rank) {
  char magic[5];
  is.read(magic, 5);
  if (!is || std::memcmp(magic, "WMDL", 4) != 0) throw Error("model checkpoint: bad magic");
  if (magic[4] != '1') throw VersionError(str_cat("model checkpoint: unsupported version ", magic[4]));
  std::uint32_t kind = 0;
  std::int32_t a[12];
  is.read(reinterpret_cast<char*>(&kind), 4);
  is.read(reinterpret_cast<char*>(a), sizeof a);
  if (!is) throw Error("model checkpoint: truncated header");
  c.latent_channels = a[0];
  c.width = a[1];
  c.levels = a[2];
  c.time_dim = a[3];
  c.attn_dim = a[4];
  c.token_dim = a[5];
  c.use_depth = a[6];
  c.use_source = a[7];
  c.cross_attention = a[8];
  c.mask_normalize = a[9];
  pretrained = a[10];
  rank = a[11];
  c.validate();
  return kind;
}

template <typename T>
void write_block(std::ostream& os, const Tensor<T>& t) {
  const std::uint32_t r = static_cast<std::uint32_t>(t.rank());
  os.write(reinterpret_cast<const char*>(&r), 4);
  for (int d : t.shape()) {
    const std::int32_t x = d;
    os.write(reinterpret_cast<const char*>(&x), 4);
  }
  std::vector<float> buf(t.vec().begin(), t.vec().end());
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(4 * buf.size()));
}

template <typename T>
void read_block(std::istream& is, std::span<T> dst, const std::vector<int>& expect) {
  std::uint32_t r = 0;
  is.read(reinterpret_cast<char*>(&r), 4);
  if (!is || r != expect.size()) throw Error("model checkpoint: block rank mismatch");
  for (int d : expect) {
    std::int32_t x = 0;
    is.read(reinterpret_cast<char*>(&x), 4);
    if (!is || x != d) throw Error("model checkpoint: block shape mismatch");
  }
  std::vector<float> buf(dst.size());
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(4 * buf.size()));
  if (!is) throw Error("model checkpoint: truncated block");
  std::copy(buf.begin(), buf.end(), dst.begin());
}

}  // namespace detail

template <typename T>
void save_unet(const UNetWeights<T>& w, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(str_cat("save_model: cannot open ", path));
  detail::write_arch(os, 0, w.config(), w.pretrained, 0);
  const std::uint32_t n = static_cast<std::uint32_t>(w.count());
  os.write(reinterpret_cast<const char*>(&n), 4);
  for (std::size_t i = 0; i < w.count(); ++i) detail::write_block(os, w.tensor(i));
  if (!os) throw Error(str_cat("save_model: write failed for ", path));
}

template <typename T>
UNetWeights<T> load_unet(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(str_cat("load_model: cannot open ", path));
  UNetConfig c;
  bool pretrained = false;
  int rank = 0;
  if (detail::read_arch(is, c, pretrained, rank) != 0) throw Error("load_model: checkpoint holds adapter deltas, not full weights");
  UNetWeights<T> w(c);
  std::uint32_t n = 0;
  is.read(reinterpret_cast<char*>(&n), 4);
  if (!is || n != w.count()) throw Error("load_model: weight block count does not match architecture");
  for (std::size_t i = 0; i < w.count(); ++i) {
    const auto& s = w.specs()[i];
    detail::read_block(is, w.params().subspan(w.offset(i), Tensor<T>::count(s.shape)), s.shape);
  }
  w.pretrained = pretrained;
  return w;
}

template <typename T>
void save_lora(const LoraDeltas<T>& d, const UNetConfig& arch, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(str_cat("save_adapter: cannot open ", path));
  detail::write_arch(os, 1, arch, true, d.rank());
  const std::uint32_t n = static_cast<std::uint32_t>(2 * d.targets().size());
  os.write(reinterpret_cast<const char*>(&n), 4);
  for (std::size_t j = 0; j < d.targets().size(); ++j) {
    detail::write_block(os, d.a(j));
    detail::write_block(os, d.b(j));
  }
  if (!os) throw Error(str_cat("save_adapter: write failed for ", path));
}

template <typename T>
LoraDeltas<T> load_lora(const UNetWeights<T>& base, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(str_cat("load_adapter: cannot open ", path));
  UNetConfig c;
  bool pretrained = false;
  int rank = 0;
  if (detail::read_arch(is, c, pretrained, rank) != 1) throw Error("load_adapter: checkpoint holds full weights, not adapter deltas");
  if (!(c == base.config())) throw Error("load_adapter: adapter architecture does not match the base model");
  LoraDeltas<T> d(base, rank);
  std::uint32_t n = 0;
  is.read(reinterpret_cast<char*>(&n), 4);
  if (!is || n != 2 * d.targets().size()) throw Error("load_adapter: block count mismatch");
  for (const auto& tg : d.targets()) {
    detail::read_block(is, d.params().subspan(tg.a_off, static_cast<std::size_t>(rank) * tg.cols), {rank, tg.cols});
    detail::read_block(is, d.params().subspan(tg.b_off, static_cast<std::size_t>(tg.rows) * rank), {tg.rows, rank});
  }
  return d;
}

// Order-sensitive FNV-1a over the raw bytes of a parameter span.
template <typename T>
std::uint64_t checksum(std::span<const T> p) {
  std::uint64_t h = 1469598103934665603ull;
  const auto* b = reinterpret_cast<const unsigned char*>(p.data());
  for (std::size_t i = 0; i < p.size_bytes(); ++i) {
    h ^= b[i];
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace weave
