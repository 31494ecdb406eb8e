// Copyright 2026 The Weave Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <numbers>
#include <vector>

#include "weave/adam.hpp"
#include "weave/image_io.hpp"
#include "weave/image_ops.hpp"
#include "weave/models.hpp"
#include "weave/pipeline.hpp"
#include "weave/schedule.hpp"
#include "weave/viewpoints.hpp"

namespace weave {

// ---------------------------------------------------------------------------
// Procedural per-instance patterns over UV space

struct Pattern {
  enum class Kind { Flat, Stripes, Checker };
  Kind kind = Kind::Flat;
  Vec3 a{0.5, 0.5, 0.5}, b{0.5, 0.5, 0.5};
  double frequency = 4;  // periods per unit UV
  double angle = 0;

  Vec3 color(double u, double v) const {
    switch (kind) {
      case Kind::Flat: return a;
      case Kind::Stripes: {
        const double s = u * std::cos(angle) + v * std::sin(angle);
        return std::fmod(std::floor(s * frequency * 2.0), 2.0) == 0.0 ? a : b;
      }
      case Kind::Checker: {
        const long k = static_cast<long>(std::floor(u * frequency)) + static_cast<long>(std::floor(v * frequency));
        return (k & 1) ? b : a;
      }
    }
    return a;
  }
};

struct PatternKinds {
  bool flat = true, stripes = true, checker = true;
};

inline Pattern random_pattern(Rng& rng, const PatternKinds& kinds) {
  std::vector<Pattern::Kind> pool;
  if (kinds.flat) pool.push_back(Pattern::Kind::Flat);
  if (kinds.stripes) pool.push_back(Pattern::Kind::Stripes);
  if (kinds.checker) pool.push_back(Pattern::Kind::Checker);
  if (pool.empty()) throw Error("random_pattern: no pattern kinds enabled");
  Pattern p;
  p.kind = pool[rng.index(pool.size())];
  p.a = {rng.uniform(), rng.uniform(), rng.uniform()};
  p.b = {rng.uniform(), rng.uniform(), rng.uniform()};
  p.frequency = rng.uniform(2.0, 8.0);
  p.angle = rng.uniform(0.0, std::numbers::pi);
  return p;
}

inline Pattern flat_pattern(const Vec3& c) {
  Pattern p;
  p.a = p.b = c;
  return p;
}

// The pattern over the unit UV square, sampled at pixel centres.
inline Tensor<float> pattern_image(const Pattern& p, int side = kRefSide) {
  Tensor<float> img({3, side, side});
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      const Vec3 c = p.color((x + 0.5) / side, (y + 0.5) / side);
      img.at(0, y, x) = static_cast<float>(c.x);
      img.at(1, y, x) = static_cast<float>(c.y);
      img.at(2, y, x) = static_cast<float>(c.z);
    }
  return img;
}

// Ground-truth shading of a G-buffer with one pattern per instance.
template <typename T>
Tensor<T> shade_patterns(const GBuffer& g, const std::vector<Pattern>& patterns) {
  Tensor<T> img({3, g.height, g.width});
  const std::size_t plane = g.pixel_count();
  for (std::size_t i = 0; i < plane; ++i) {
    if (!g.valid(i)) continue;
    const Vec3 c = patterns.at(static_cast<std::size_t>(g.instance[i])).color(g.uv[i].x, g.uv[i].y);
    img[i] = static_cast<T>(c.x);
    img[plane + i] = static_cast<T>(c.y);
    img[2 * plane + i] = static_cast<T>(c.z);
  }
  return img;
}

// ---------------------------------------------------------------------------
// Procedural box-room dataset

struct DatasetConfig {
  int scenes = 8;             // toy room plus randomly furnished variants
  int views_per_scene = 32;
  int render_size = 64;
  PatternKinds kinds;
  double sr_blur_sigma = 1.5;  // pixels
};

template <typename T>
struct DenoiseSample {
  Tensor<T> image;   // sharp render (3, H, W)
  Tensor<T> x0;      // its latent
  Conditioning<T> cond;
  std::vector<Tensor<float>> references;
};

inline Scene random_room(Rng& rng) {
  RoomSpec spec = toy_room_spec();
  const double sx = rng.uniform(0.6, 1.6), sz = rng.uniform(0.6, 1.6), sy = rng.uniform(0.5, 1.6);
  const double cx = rng.uniform(1.0 + sx / 2, 3.0 - sx / 2), cz = rng.uniform(1.0 + sz / 2, 3.0 - sz / 2);
  spec.furniture = {{{{cx - sx / 2, 0.0, cz - sz / 2}, {cx + sx / 2, sy, cz + sz / 2}}, 1}};
  return build_box_room(spec);
}

// Pool of rasterized views over the toy room and random variants; samples
// draw fresh patterns for each use.
class ProceduralDataset {
 public:
  ProceduralDataset(const DatasetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg.scenes < 1 || cfg.views_per_scene < 1) throw Error("dataset: needs at least one scene and one view");
    Rng rng(derive_seed(seed, 0x726f6f6dull));
    ViewpointOptions vo;
    vo.width = vo.height = cfg.render_size;
    for (int s = 0; s < cfg.scenes; ++s) {
      const Scene scene = s == 0 ? build_box_room(toy_room_spec()) : random_room(rng);
      instances_ = scene.instance_count;
      for (const Camera& cam : sample_viewpoints(scene, cfg.views_per_scene, rng.next_u64(), vo))
        views_.push_back(rasterize(scene.mesh, cam));
    }
  }

  std::size_t view_count() const { return views_.size(); }
  const GBuffer& view(std::size_t i) const { return views_.at(i); }
  int instance_count() const { return instances_; }
  const DatasetConfig& config() const { return cfg_; }

  template <typename T>
  DenoiseSample<T> teacher_sample(Rng& rng) const {
    const GBuffer& g = views_[rng.index(views_.size())];
    std::vector<Pattern> pats;
    for (int i = 0; i < instances_; ++i) pats.push_back(random_pattern(rng, cfg_.kinds));
    DenoiseSample<T> s;
    s.image = shade_patterns<T>(g, pats);
    s.x0 = LatentCodec::encode(s.image);
    for (const auto& p : pats) s.references.push_back(pattern_image(p));
    s.cond = frame_conditioning(g, instances_, ReferenceTokens<T>::multi(s.references));
    return s;
  }

  // Sharp render as x0; the blurred render's latent as source.
  template <typename T>
  DenoiseSample<T> sr_sample(Rng& rng) const {
    const GBuffer& g = views_[rng.index(views_.size())];
    std::vector<Pattern> pats;
    for (int i = 0; i < instances_; ++i) pats.push_back(random_pattern(rng, cfg_.kinds));
    DenoiseSample<T> s;
    s.image = shade_patterns<T>(g, pats);
    s.x0 = LatentCodec::encode(s.image);
    s.cond.source = LatentCodec::encode(gaussian_blur(s.image, cfg_.sr_blur_sigma));
    return s;
  }

 private:
  DatasetConfig cfg_;
  std::vector<GBuffer> views_;
  int instances_ = 0;
};

// Directory of PNGs (image, depth, masks, references) plus manifest.csv.
template <typename T>
void write_dataset(const std::string& dir, const std::vector<DenoiseSample<T>>& samples) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream man(fs::path(dir) / "manifest.csv");
  man << "index,image,depth,masks,references\n";
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const std::string stem = str_cat("sample_", i);
    save_png((fs::path(dir) / (stem + ".png")).string(), s.image.template cast<float>());
    save_png((fs::path(dir) / (stem + "_depth.png")).string(), ops::upsample2(s.cond.depth).template cast<float>());
    for (std::size_t m = 0; m < s.cond.masks.size(); ++m)
      save_png((fs::path(dir) / str_cat(stem, "_mask", m, ".png")).string(), s.cond.masks[m].template cast<float>());
    for (std::size_t r = 0; r < s.references.size(); ++r)
      save_png((fs::path(dir) / str_cat(stem, "_ref", r, ".png")).string(), s.references[r]);
    man << i << "," << stem << ".png," << stem << "_depth.png," << s.cond.masks.size() << "," << s.references.size() << "\n";
  }
  if (!man) throw Error(str_cat("write_dataset: failed writing manifest in ", dir));
}

// ---------------------------------------------------------------------------
// Denoiser pretraining

// Mean squared noise-prediction error and, if grad is non-empty, its gradient
// with respect to all base weights.
template <typename T>
double denoise_loss(const UNetWeights<T>& w, const Tensor<T>& x0, double t, const Tensor<T>& eps, const Conditioning<T>& c,
                    const NoiseSchedule& sched, std::span<T> grad = {}) {
  const Tensor<T> x_t = sched.add_noise(x0, t, eps);
  Tape<T> tp;
  const bool train = !grad.empty();
  const auto v = make_unet_vars<T>(tp, w, nullptr, train, false);
  const auto loss = ops::mse(tp, unet_forward(tp, w, v, x_t, t, c), eps);
  const double value = static_cast<double>(tp.value(loss)[0]);
  if (train) {
    tp.backward(loss, Tensor<T>({1}, T(1)));
    for (std::size_t i = 0; i < w.count(); ++i) {
      const Tensor<T> g = tp.grad(v.base[i]);
      std::copy(g.vec().begin(), g.vec().end(), grad.begin() + static_cast<std::ptrdiff_t>(w.offset(i)));
    }
  }
  return value;
}

struct PretrainConfig {
  int steps = 2000;
  double lr = 1e-3;
  double t_min = 0.02, t_max = 0.98;
  double clip_norm = 1.0;  // global gradient norm; <= 0 disables
  double final_lr_fraction = 0.1;  // cosine decay of the rate to this fraction
  int heldout = 32;
  int log_every = 100;
};

struct PretrainReport {
  std::vector<double> train_loss;  // running mean per log interval
  double heldout_loss = 0;
  double baseline_loss = 0;  // predicting zero noise
  double heldout_loss_shuffled = 0;  // references permuted across instances
};

namespace detail {

template <typename T>
using SampleFn = std::function<DenoiseSample<T>(Rng&)>;

template <typename T>
UNetWeights<T> pretrain_denoiser(const UNetConfig& arch, const SampleFn<T>& sample, const PretrainConfig& pc, std::uint64_t seed,
                                 PretrainReport& report, const std::function<void(int, double)>& progress) {
  UNetWeights<T> w = UNetWeights<T>::initialized(arch, seed);
  const NoiseSchedule sched;
  Rng data(derive_seed(seed, 1)), times(derive_seed(seed, 2)), noise(derive_seed(seed, 3));
  Adam<T> adam(w.params().size(), {pc.lr});
  std::vector<T> grad(w.params().size());
  double acc = 0;
  int acc_n = 0;
  for (int step = 0; step < pc.steps; ++step) {
    const DenoiseSample<T> s = sample(data);
    const double t = times.uniform(pc.t_min, pc.t_max);
    Tensor<T> eps(s.x0.shape());
    noise.fill_normal(eps);
    const double loss = denoise_loss(w, s.x0, t, eps, s.cond, sched, std::span<T>(grad));
    if (!std::isfinite(loss)) throw Error(str_cat("pretrain: loss diverged at step ", step, " (t = ", t, ", loss = ", loss, ")"));
    if (pc.clip_norm > 0) {
      double n2 = 0;
      for (T g : grad) n2 += static_cast<double>(g) * g;
      const double n = std::sqrt(n2);
      if (n > pc.clip_norm)
        for (T& g : grad) g = static_cast<T>(g * (pc.clip_norm / n));
    }
    const double progress_frac = pc.steps > 1 ? static_cast<double>(step) / (pc.steps - 1) : 0.0;
    adam.set_lr(pc.lr * (pc.final_lr_fraction + (1 - pc.final_lr_fraction) * 0.5 * (1 + std::cos(std::numbers::pi * progress_frac))));
    adam.step(w.params(), grad);
    acc += loss;
    ++acc_n;
    if ((step + 1) % std::max(1, pc.log_every) == 0 || step + 1 == pc.steps) {
      report.train_loss.push_back(acc / acc_n);
      if (progress) progress(step + 1, acc / acc_n);
      acc = 0;
      acc_n = 0;
    }
  }
  w.pretrained = true;
  return w;
}

}  // namespace detail

// Held-out loss, zero-prediction baseline and reference-shuffled loss over
// a fixed set of (sample, t, eps) draws.
template <typename T>
void evaluate_heldout(const UNetWeights<T>& w, const detail::SampleFn<T>& sample, const PretrainConfig& pc, std::uint64_t seed,
                      PretrainReport& report) {
  const NoiseSchedule sched;
  Rng rng(derive_seed(seed, 0x68656c64ull));
  double loss = 0, base = 0, shuf = 0;
  for (int i = 0; i < pc.heldout; ++i) {
    const DenoiseSample<T> s = sample(rng);
    const double t = rng.uniform(pc.t_min, pc.t_max);
    Tensor<T> eps(s.x0.shape());
    rng.fill_normal(eps);
    loss += denoise_loss(w, s.x0, t, eps, s.cond, sched);
    base += static_cast<double>(squared_norm<T>(eps.vec())) / static_cast<double>(eps.size());
    if (s.cond.tokens.size() > 1) {
      Conditioning<T> c = s.cond;
      std::rotate(c.tokens.begin(), c.tokens.begin() + 1, c.tokens.end());
      shuf += denoise_loss(w, s.x0, t, eps, c, sched);
    }
  }
  report.heldout_loss = loss / pc.heldout;
  report.baseline_loss = base / pc.heldout;
  report.heldout_loss_shuffled = shuf / pc.heldout;
}

template <typename T>
UNetWeights<T> pretrain_teacher(const ProceduralDataset& data, const PretrainConfig& pc, std::uint64_t seed, PretrainReport* report = nullptr,
                                const std::function<void(int, double)>& progress = {}, const UNetConfig& arch = teacher_config()) {
  PretrainReport local;
  PretrainReport& r = report ? *report : local;
  const detail::SampleFn<T> fn = [&data](Rng& rng) { return data.teacher_sample<T>(rng); };
  UNetWeights<T> w = detail::pretrain_denoiser<T>(arch, fn, pc, seed, r, progress);
  evaluate_heldout(w, fn, pc, derive_seed(seed, 0x7465ull), r);
  return w;
}

template <typename T>
UNetWeights<T> pretrain_sr(const ProceduralDataset& data, const PretrainConfig& pc, std::uint64_t seed, PretrainReport* report = nullptr,
                           const std::function<void(int, double)>& progress = {}, const UNetConfig& arch = sr_config()) {
  PretrainReport local;
  PretrainReport& r = report ? *report : local;
  const detail::SampleFn<T> fn = [&data](Rng& rng) { return data.sr_sample<T>(rng); };
  UNetWeights<T> w = detail::pretrain_denoiser<T>(arch, fn, pc, seed, r, progress);
  evaluate_heldout(w, fn, pc, derive_seed(seed, 0x7372ull), r);
  return w;
}

// Deterministic denoising pass with the super-resolution model conditioned on
// the image's own latent: noise to t_start, then `steps` DDIM updates to 0.
template <typename T>
Tensor<T> sr_refine(const NoisePredictor<T>& sr, const Tensor<T>& image, double t_start, int steps, std::uint64_t seed) {
  if (steps < 1) throw Error("sr_refine: needs at least one step");
  const NoiseSchedule sched;
  Conditioning<T> c;
  c.source = LatentCodec::encode(image);
  Tensor<T> eps(c.source.shape());
  Rng(seed).fill_normal(eps);
  Tensor<T> x = sched.add_noise(c.source, t_start, eps);
  Tensor<T> x0 = c.source;
  for (int k = 0; k < steps; ++k) {
    const double t = t_start * (steps - k) / steps;
    const double tn = t_start * (steps - k - 1) / steps;
    const Tensor<T> e = sr.predict(x, t, c);
    const double a = sched.alpha(t), s = sched.sigma(t);
    for (std::size_t i = 0; i < x.size(); ++i) x0[i] = static_cast<T>((x[i] - s * e[i]) / a);
    if (k + 1 == steps) break;
    const double an = sched.alpha(tn), sn = sched.sigma(tn);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<T>(an * x0[i] + sn * e[i]);
  }
  Tensor<T> out = LatentCodec::decode(x0);
  for (auto& v : out.vec()) v = std::clamp(v, T(0), T(1));
  return out;
}

}  // namespace weave
