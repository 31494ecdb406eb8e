// Copyright 2026 The Weave Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "weave/distill.hpp"
#include "weave/image_io.hpp"
#include "weave/image_ops.hpp"
#include "weave/pretrain.hpp"

namespace weave {

// A rendered view together with the geometry that produced it.
struct EvalView {
  GBuffer gbuffer;
  Tensor<float> image;  // (3, H, W)
};

inline Vec3 mean_color(const Tensor<float>& img) {
  const std::size_t plane = img.size() / 3;
  Vec3 m{0, 0, 0};
  for (std::size_t p = 0; p < plane; ++p) m = m + Vec3{img[p], img[plane + p], img[2 * plane + p]};
  return m * (1.0 / static_cast<double>(plane));
}

namespace detail {

// 6 feature maps per pixel: Sobel x and y of each RGB channel, at pixels
// whose 3x3 neighbourhood passes keep(). Returns the 6x6 Gram matrix.
inline std::array<double, 36> gradient_gram(const Tensor<float>& img, const std::function<bool(int, int)>& keep) {
  std::array<double, 36> g{};
  const int H = img.dim(1), W = img.dim(2);
  long n = 0;
  for (int y = 1; y + 1 < H; ++y)
    for (int x = 1; x + 1 < W; ++x) {
      bool ok = true;
      for (int dy = -1; dy <= 1 && ok; ++dy)
        for (int dx = -1; dx <= 1 && ok; ++dx) ok = keep(y + dy, x + dx);
      if (!ok) continue;
      double f[6];
      for (int c = 0; c < 3; ++c) {
        auto v = [&](int yy, int xx) { return static_cast<double>(img.at(c, yy, xx)); };
        f[2 * c] = (v(y - 1, x + 1) + 2 * v(y, x + 1) + v(y + 1, x + 1)) - (v(y - 1, x - 1) + 2 * v(y, x - 1) + v(y + 1, x - 1));
        f[2 * c + 1] = (v(y + 1, x - 1) + 2 * v(y + 1, x) + v(y + 1, x + 1)) - (v(y - 1, x - 1) + 2 * v(y - 1, x) + v(y - 1, x + 1));
      }
      for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) g[i * 6 + j] += f[i] * f[j];
      ++n;
    }
  if (n > 0)
    for (auto& v : g) v /= static_cast<double>(n);
  return g;
}

}  // namespace detail

struct InstanceScore {
  bool observed = false;
  double color_error = std::numeric_limits<double>::quiet_NaN();  // L2 of mean colours, in [0, sqrt(3)]
  double style_distance = std::numeric_limits<double>::quiet_NaN();  // Frobenius distance of gradient Gram matrices
};

// View-averaged per-instance colour and style errors against the references.
inline std::vector<InstanceScore> instance_consistency(const std::vector<EvalView>& views, const std::vector<Tensor<float>>& refs) {
  const std::size_t n = refs.size();
  std::vector<InstanceScore> out(n);
  std::vector<double> color_sum(n, 0), style_sum(n, 0);
  std::vector<int> seen(n, 0);
  std::vector<std::array<double, 36>> ref_gram;
  std::vector<Vec3> ref_mean;
  for (const auto& r : refs) {
    ref_gram.push_back(detail::gradient_gram(r, [](int, int) { return true; }));
    ref_mean.push_back(mean_color(r));
  }
  for (const auto& v : views) {
    const std::size_t plane = v.gbuffer.pixel_count();
    for (std::size_t i = 0; i < n; ++i) {
      Vec3 s{0, 0, 0};
      long cnt = 0;
      for (std::size_t p = 0; p < plane; ++p)
        if (v.gbuffer.instance[p] == static_cast<int>(i)) {
          s = s + Vec3{v.image[p], v.image[plane + p], v.image[2 * plane + p]};
          ++cnt;
        }
      if (cnt == 0) continue;
      ++seen[i];
      color_sum[i] += length(s * (1.0 / static_cast<double>(cnt)) - ref_mean[i]);
      const int W = v.gbuffer.width;
      const auto g = detail::gradient_gram(v.image, [&](int y, int x) {
        return v.gbuffer.instance[static_cast<std::size_t>(y) * W + x] == static_cast<int>(i);
      });
      double d = 0;
      for (int k = 0; k < 36; ++k) d += (g[k] - ref_gram[i][k]) * (g[k] - ref_gram[i][k]);
      style_sum[i] += std::sqrt(d);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (seen[i] == 0) continue;
    out[i].observed = true;
    out[i].color_error = color_sum[i] / seen[i];
    out[i].style_distance = style_sum[i] / seen[i];
  }
  return out;
}

// Variance of the Laplacian over valid pixels.
inline double sharpness(const Tensor<float>& image, const Tensor<float>* validity = nullptr) { return laplacian_variance(image, validity); }

// Per-instance standard deviation across views of the mean instance
// luminance; NaN when fewer than two views observe the instance.
inline std::vector<double> shading_leak(const std::vector<EvalView>& views, int instance_count) {
  std::vector<std::vector<double>> lum(static_cast<std::size_t>(instance_count));
  for (const auto& v : views) {
    const Tensor<float> y = luminance(v.image);
    std::vector<double> s(lum.size(), 0);
    std::vector<long> c(lum.size(), 0);
    for (std::size_t p = 0; p < v.gbuffer.pixel_count(); ++p) {
      const int id = v.gbuffer.instance[p];
      if (id < 0 || id >= instance_count) continue;
      s[id] += y[p];
      ++c[id];
    }
    for (std::size_t i = 0; i < lum.size(); ++i)
      if (c[i] > 0) lum[i].push_back(s[i] / c[i]);
  }
  std::vector<double> out;
  for (const auto& l : lum) {
    if (l.size() < 2) {
      out.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    double m = 0, m2 = 0;
    for (double x : l) m += x;
    m /= l.size();
    for (double x : l) m2 += (x - m) * (x - m);
    out.push_back(std::sqrt(m2 / l.size()));
  }
  return out;
}

template <typename T>
std::vector<EvalView> render_views(const Scene& scene, const TextureField<T>& field, const std::vector<Camera>& cams) {
  std::vector<EvalView> out;
  for (const auto& c : cams) {
    EvalView v;
    v.gbuffer = rasterize(scene.mesh, c);
    v.image = shade(v.gbuffer, field).template cast<float>();
    out.push_back(std::move(v));
  }
  return out;
}

struct EvalReport {
  std::vector<InstanceScore> instances;
  std::vector<double> shading_leak;
  double render_sharpness = 0;  // mean over views
  double bake_sharpness = 0;    // over covered texels of the baked atlas
};

inline Tensor<float> coverage_tensor(const std::vector<std::uint8_t>& m, int w, int h) {
  Tensor<float> t({1, h, w});
  for (std::size_t i = 0; i < m.size(); ++i) t[i] = m[i] ? 1.0f : 0.0f;
  return t;
}

template <typename T>
EvalReport evaluate(const Scene& scene, const TextureField<T>& field, const std::vector<Tensor<float>>& refs, const std::vector<Camera>& cams,
                    int bake_resolution = 256, const Tensor<float>* baked_override = nullptr) {
  EvalReport r;
  const auto views = render_views(scene, field, cams);
  r.instances = instance_consistency(views, refs);
  r.shading_leak = shading_leak(views, scene.instance_count);
  for (const auto& v : views) {
    const Tensor<float> valid = validity_mask<float>(v.gbuffer);
    r.render_sharpness += sharpness(v.image, &valid);
  }
  if (!views.empty()) r.render_sharpness /= static_cast<double>(views.size());
  const auto cov = uv_coverage_mask(scene.mesh, bake_resolution, bake_resolution);
  const Tensor<float> covt = coverage_tensor(cov, bake_resolution, bake_resolution);
  const Tensor<float> baked = baked_override ? *baked_override : bake(field, bake_resolution, bake_resolution, 64, &cov);
  r.bake_sharpness = sharpness(baked, &covt);
  return r;
}

inline double mean_color_error(const EvalReport& r) {
  double s = 0;
  int n = 0;
  for (const auto& i : r.instances)
    if (i.observed) {
      s += i.color_error;
      ++n;
    }
  return n ? s / n : std::numeric_limits<double>::quiet_NaN();
}

inline void write_eval_csv(const std::string& path, const EvalReport& r) {
  std::ofstream os(path);
  os << "instance,observed,color_error,style_distance,shading_leak\n";
  for (std::size_t i = 0; i < r.instances.size(); ++i)
    os << i << "," << (r.instances[i].observed ? 1 : 0) << "," << r.instances[i].color_error << "," << r.instances[i].style_distance << ","
       << (i < r.shading_leak.size() ? r.shading_leak[i] : std::nan("")) << "\n";
  os << "render_sharpness,,," << r.render_sharpness << ",\n";
  os << "bake_sharpness,,," << r.bake_sharpness << ",\n";
  if (!os) throw Error(str_cat("eval: failed writing ", path));
}

// ---------------------------------------------------------------------------
// Baking benchmark

struct BenchRow {
  int resolution = 0;
  std::vector<double> seconds;  // every repeat
  double median_seconds = 0;
  double per_texel_ns = 0;
};

struct BenchReport {
  std::vector<BenchRow> rows;
  bool monotone = true;
  double per_texel_spread = 1;  // max / min per-texel time
  bool within_band = true;      // spread <= 3
};

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

// Serial wall-clock timings of bake() per square resolution.
template <typename T>
BenchReport bench_bake(const TextureField<T>& field, const std::vector<int>& resolutions, int repeats, int tile = 256,
                       const std::function<void(const BenchRow&)>& progress = {}) {
  if (repeats < 1) throw Error("bench_bake: repeats must be positive");
  BenchReport r;
  for (int res : resolutions) {
    BenchRow row;
    row.resolution = res;
    for (int k = 0; k < repeats; ++k) {
      const auto t0 = std::chrono::steady_clock::now();
      const Tensor<float> img = bake(field, res, res, tile);
      const auto t1 = std::chrono::steady_clock::now();
      if (img.size() == 0) throw Error("bench_bake: empty bake");
      row.seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    row.median_seconds = median(row.seconds);
    row.per_texel_ns = 1e9 * row.median_seconds / (static_cast<double>(res) * res);
    if (progress) progress(row);
    r.rows.push_back(row);
  }
  double lo = std::numeric_limits<double>::infinity(), hi = 0;
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    lo = std::min(lo, r.rows[i].per_texel_ns);
    hi = std::max(hi, r.rows[i].per_texel_ns);
    if (i > 0 && r.rows[i].resolution > r.rows[i - 1].resolution && !(r.rows[i].median_seconds > r.rows[i - 1].median_seconds))
      r.monotone = false;
  }
  if (!r.rows.empty()) r.per_texel_spread = hi / lo;
  r.within_band = r.per_texel_spread <= 3.0;
  return r;
}

inline void write_bench_csv(const std::string& path, const BenchReport& r) {
  std::ofstream os(path);
  os << "resolution,median_seconds,per_texel_ns,repeats\n";
  for (const auto& row : r.rows) os << row.resolution << "," << row.median_seconds << "," << row.per_texel_ns << "," << row.seconds.size() << "\n";
  os << "# monotone=" << (r.monotone ? 1 : 0) << " per_texel_spread=" << r.per_texel_spread << " within_band=" << (r.within_band ? 1 : 0) << "\n";
  if (!os) throw Error(str_cat("bench: failed writing ", path));
}

// ---------------------------------------------------------------------------
// Ablations

enum class Variant { Full, PostSR, NoSRLoss, NoFeatureMask, NoMultiRef };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::Full: return "full";
    case Variant::PostSR: return "post-sr";
    case Variant::NoSRLoss: return "no-sr-loss";
    case Variant::NoFeatureMask: return "no-f-mask";
    case Variant::NoMultiRef: return "no-multi-ref";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  for (Variant v : {Variant::Full, Variant::PostSR, Variant::NoSRLoss, Variant::NoFeatureMask, Variant::NoMultiRef})
    if (to_string(v) == s) return v;
  throw Error(str_cat("unknown ablation variant '", s, "' (expected full, post-sr, no-sr-loss, no-f-mask, no-multi-ref)"));
}

inline DistillConfig variant_config(DistillConfig c, Variant v) {
  switch (v) {
    case Variant::Full: break;
    case Variant::PostSR:
    case Variant::NoSRLoss: c.use_sr = false; break;
    case Variant::NoFeatureMask: c.feature_masks = false; break;
    case Variant::NoMultiRef: c.multi_ref = false; break;
  }
  return c;
}

struct AblationSetup {
  Scene scene;
  std::vector<Tensor<float>> references;
  DistillConfig config;
  HashGridConfig grid;
  std::shared_ptr<const UNetWeights<float>> teacher;
  std::shared_ptr<const UNetWeights<float>> sr;
  int eval_views = 16;
  int bake_resolution = 256;
  double post_sr_t = 0.5;
  int post_sr_steps = 4;
};

struct VariantResult {
  Variant variant;
  EvalReport report;
  TextureField<float> field;
  Tensor<float> baked;
  std::vector<EvalView> views;
};

inline std::vector<Camera> eval_cameras(const Scene& scene, const DistillConfig& cfg, int n) {
  ViewpointOptions vo;
  vo.width = vo.height = cfg.render_size;
  return sample_viewpoints(scene, n, derive_seed(cfg.seed, 0x6576616cull), vo);
}

// Trains one variant from the shared seed and evaluates it. post-SR reuses a
// finished no-sr-loss field when given one.
inline VariantResult run_variant(const AblationSetup& s, Variant v, const std::string& run_dir = {}, const TextureField<float>* no_sr_field = nullptr,
                                 const std::function<void(const StepRecord&)>& on_step = {}) {
  const DistillConfig cfg = variant_config(s.config, v);
  SceneParticle<float> particle = make_scene_particle<float>(s.scene, s.references, cfg, s.grid);
  if (v == Variant::PostSR && no_sr_field) {
    particle.field() = *no_sr_field;
  } else {
    TeacherModel<float> teacher(s.teacher);
    AdapterModel<float> adapter(s.teacher, cfg.lora_rank, derive_seed(cfg.seed, 0x6c6f7261ull));
    std::optional<SRModel<float>> sr;
    if (s.sr) sr.emplace(s.sr);
    Distiller<float> d(cfg, particle, teacher, adapter, sr ? &*sr : nullptr);
    d.run(run_dir, false, on_step);
  }
  VariantResult r{v, {}, particle.field(), {}, {}};
  const auto cov = uv_coverage_mask(s.scene.mesh, s.bake_resolution, s.bake_resolution);
  r.baked = bake(r.field, s.bake_resolution, s.bake_resolution, 64, &cov);
  if (v == Variant::PostSR) {
    if (!s.sr) throw Error("ablation: post-sr needs a super-resolution model");
    const SRModel<float> sr(s.sr);
    r.baked = sr_refine(sr, r.baked, s.post_sr_t, s.post_sr_steps, derive_seed(cfg.seed, 0x706f7374ull));
    for (std::size_t i = 0; i < cov.size(); ++i)
      if (!cov[i])
        for (int c = 0; c < 3; ++c) r.baked[c * cov.size() + i] = 0.0f;
  }
  const auto cams = eval_cameras(s.scene, cfg, s.eval_views);
  r.report = evaluate(s.scene, r.field, s.references, cams, s.bake_resolution, &r.baked);
  r.views = render_views(s.scene, r.field, cams);
  return r;
}

// Side-by-side grid of up to 4 views.
inline Tensor<float> view_grid(const std::vector<EvalView>& views) {
  const int n = static_cast<int>(std::min<std::size_t>(4, views.size()));
  if (n == 0) return Tensor<float>({3, 1, 1});
  const int H = views[0].image.dim(1), W = views[0].image.dim(2);
  Tensor<float> g({3, H, W * n});
  for (int k = 0; k < n; ++k)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) g.at(c, y, k * W + x) = views[k].image.at(c, y, x);
  return g;
}

inline std::vector<VariantResult> run_ablations(const AblationSetup& s, const std::vector<Variant>& variants, const std::string& out_dir = {},
                                                const std::function<void(Variant, const StepRecord&)>& on_step = {}) {
  namespace fs = std::filesystem;
  std::vector<VariantResult> results;
  results.reserve(variants.size());  // no_sr points into this vector
  const TextureField<float>* no_sr = nullptr;
  std::vector<Variant> order = variants;
  // Train no-sr-loss before post-sr so the latter can reuse it.
  std::stable_sort(order.begin(), order.end(), [](Variant a, Variant b) { return a == Variant::NoSRLoss && b == Variant::PostSR; });
  for (Variant v : order) {
    const std::string dir = out_dir.empty() ? std::string() : (fs::path(out_dir) / to_string(v)).string();
    auto cb = [&](const StepRecord& r) {
      if (on_step) on_step(v, r);
    };
    results.push_back(run_variant(s, v, dir, no_sr, cb));
    if (v == Variant::NoSRLoss) no_sr = &results.back().field;
    if (!dir.empty()) {
      fs::create_directories(dir);
      save_png((fs::path(dir) / "views.png").string(), view_grid(results.back().views));
      save_png((fs::path(dir) / "baked.png").string(), results.back().baked);
      write_eval_csv((fs::path(dir) / "eval.csv").string(), results.back().report);
    }
  }
  std::vector<VariantResult> sorted;
  for (Variant v : variants)
    for (auto& r : results)
      if (r.variant == v) sorted.push_back(std::move(r));
  if (!out_dir.empty()) {
    std::ofstream os(fs::path(out_dir) / "ablation.csv");
    os << "variant,mean_color_error,render_sharpness,bake_sharpness,delta_color_error,delta_render_sharpness,delta_bake_sharpness\n";
    const EvalReport* full = nullptr;
    for (const auto& r : sorted)
      if (r.variant == Variant::Full) full = &r.report;
    for (const auto& r : sorted) {
      os << to_string(r.variant) << "," << mean_color_error(r.report) << "," << r.report.render_sharpness << "," << r.report.bake_sharpness;
      if (full)
        os << "," << mean_color_error(r.report) - mean_color_error(*full) << "," << r.report.render_sharpness - full->render_sharpness << ","
           << r.report.bake_sharpness - full->bake_sharpness;
      else
        os << ",,,";
      os << "\n";
    }
  }
  return sorted;
}

}  // namespace weave
