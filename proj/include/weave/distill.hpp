// Copyright 2026 The Weave Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "weave/adam.hpp"
#include "weave/models.hpp"
#include "weave/pipeline.hpp"
#include "weave/schedule.hpp"
#include "weave/viewpoints.hpp"

namespace weave {

struct DistillConfig {
  int iterations = 30000;
  double lr_texture = 1e-3;
  double lr_adapter = 1e-4;
  double t_min = 0.02;
  double t_max = 0.98;
  double t_final = 0.5;
  int anneal_start = 5000;  // upper bound moves linearly from t_max to t_final
  int anneal_end = 10000;
  double lambda_sr = 1.2;
  int sr_start = 5000;  // lambda is 0 before this iteration
  int view_count = 5000;
  int render_size = 64;
  int adapter_steps = 1;
  int lora_rank = 4;
  Weighting weighting = Weighting::SigmaSquared;
  bool feature_masks = true;  // false routes instance masks at the noise level
  bool multi_ref = true;      // false stitches all references into one
  bool use_sr = true;
  std::uint64_t seed = 0;
  int checkpoint_every = 1000;
  int log_every = 10;

  void validate() const {
    if (iterations < 0) throw Error("distill config: iterations must be non-negative");
    if (!(lr_texture > 0 && lr_adapter > 0)) throw Error("distill config: learning rates must be positive");
    if (!(t_min > 0 && t_min < t_final && t_final <= t_max && t_max <= 1))
      throw Error(str_cat("distill config: need 0 < t_min < t_final <= t_max <= 1, got ", t_min, ", ", t_final, ", ", t_max));
    if (anneal_start < 0 || anneal_end < anneal_start) throw Error("distill config: need 0 <= anneal_start <= anneal_end");
    if (anneal_start > iterations)
      throw Error(str_cat("distill config: anneal_start ", anneal_start, " exceeds iterations ", iterations));
    if (sr_start < 0) throw Error("distill config: sr_start must be non-negative");
    if (lambda_sr < 0) throw Error("distill config: lambda_sr must be non-negative");
    if (view_count < 1) throw Error("distill config: view_count must be positive");
    if (render_size < 4 || render_size % 8) throw Error("distill config: render_size must be a positive multiple of 8");
    if (adapter_steps < 0) throw Error("distill config: adapter_steps must be non-negative");
    if (lora_rank < 1) throw Error("distill config: lora_rank must be positive");
    if (checkpoint_every < 1 || log_every < 1) throw Error("distill config: cadences must be positive");
  }

  // Upper bound of the timestep range at an iteration.
  double t_upper(int iter) const {
    if (iter < anneal_start) return t_max;
    if (iter >= anneal_end) return t_final;
    const double s = static_cast<double>(iter - anneal_start) / static_cast<double>(anneal_end - anneal_start);
    return t_max + (t_final - t_max) * s;
  }

  double lambda_at(int iter) const { return iter < sr_start ? 0.0 : lambda_sr; }

  std::vector<std::pair<std::string, std::string>> entries() const {
    return {{"iterations", str_cat(iterations)},
            {"lr_texture", str_cat(lr_texture)},
            {"lr_adapter", str_cat(lr_adapter)},
            {"t_min", str_cat(t_min)},
            {"t_max", str_cat(t_max)},
            {"t_final", str_cat(t_final)},
            {"anneal_start", str_cat(anneal_start)},
            {"anneal_end", str_cat(anneal_end)},
            {"lambda_sr", str_cat(lambda_sr)},
            {"sr_start", str_cat(sr_start)},
            {"view_count", str_cat(view_count)},
            {"render_size", str_cat(render_size)},
            {"adapter_steps", str_cat(adapter_steps)},
            {"lora_rank", str_cat(lora_rank)},
            {"weighting", to_string(weighting)},
            {"feature_masks", feature_masks ? "true" : "false"},
            {"multi_ref", multi_ref ? "true" : "false"},
            {"use_sr", use_sr ? "true" : "false"},
            {"seed", str_cat(seed)},
            {"checkpoint_every", str_cat(checkpoint_every)},
            {"log_every", str_cat(log_every)}};
  }
};

// Timestep draw for an iteration: U(t_min, t_upper(iter)).
inline double sample_timestep(Rng& rng, const DistillConfig& cfg, int iter) { return rng.uniform(cfg.t_min, cfg.t_upper(iter)); }

// ---------------------------------------------------------------------------
// Particles: parameters theta, a set of views, and the map theta -> latent

template <typename T>
class Particle {
 public:
  virtual ~Particle() = default;
  virtual std::size_t view_count() const = 0;
  virtual std::span<T> params() = 0;
  virtual std::span<const T> params() const = 0;
  virtual FrameInputs<T> render(std::size_t view) const = 0;
  // Accumulates d<d_latent, latent(theta)>/d(theta) into grad.
  virtual void backward(const FrameInputs<T>& f, const Tensor<T>& d_latent, std::span<T> grad) const = 0;
  // Per-instance L2 between masked mean render colour and reference mean colour.
  virtual std::vector<double> color_errors(const FrameInputs<T>&) const { return {}; }
};

// Texture field rendered through the rasterizer and latent codec.
template <typename T>
class SceneParticle : public Particle<T> {
 public:
  SceneParticle(Scene scene, std::vector<Camera> cameras, TextureField<T> field, const std::vector<Tensor<float>>& references,
                bool multi_ref)
      : scene_(std::move(scene)), cameras_(std::move(cameras)), field_(std::move(field)) {
    if (static_cast<int>(references.size()) != scene_.instance_count)
      throw Error(str_cat("scene particle: ", references.size(), " reference images for ", scene_.instance_count, " instances"));
    if (cameras_.empty()) throw Error("scene particle: no viewpoints");
    refs_ = multi_ref ? ReferenceTokens<T>::multi(references) : ReferenceTokens<T>::single_stitched(references);
    for (const auto& r : references) {
      const std::size_t plane = r.size() / 3;
      Vec3 m{0, 0, 0};
      for (std::size_t p = 0; p < plane; ++p) m = m + Vec3{r[p], r[plane + p], r[2 * plane + p]};
      ref_means_.push_back(m * (1.0 / static_cast<double>(plane)));
    }
  }

  std::size_t view_count() const override { return cameras_.size(); }
  std::span<T> params() override { return field_.params(); }
  std::span<const T> params() const override { return field_.params(); }

  FrameInputs<T> render(std::size_t view) const override {
    return render_step_inputs(scene_.mesh, scene_.instance_count, field_, cameras_.at(view), refs_);
  }

  void backward(const FrameInputs<T>& f, const Tensor<T>& d_latent, std::span<T> grad) const override {
    shade_backward(f.gbuffer, field_, f.shade, LatentCodec::encode_backward(d_latent), grad);
  }

  std::vector<double> color_errors(const FrameInputs<T>& f) const override {
    return instance_color_errors(f.gbuffer, f.image, ref_means_);
  }

  static std::vector<double> instance_color_errors(const GBuffer& g, const Tensor<T>& image, const std::vector<Vec3>& means) {
    const std::size_t plane = g.pixel_count();
    std::vector<Vec3> sum(means.size(), Vec3{0, 0, 0});
    std::vector<long> n(means.size(), 0);
    for (std::size_t p = 0; p < plane; ++p) {
      const int id = g.instance[p];
      if (id < 0 || id >= static_cast<int>(means.size())) continue;
      sum[id] = sum[id] + Vec3{static_cast<double>(image[p]), static_cast<double>(image[plane + p]), static_cast<double>(image[2 * plane + p])};
      ++n[id];
    }
    std::vector<double> e(means.size(), std::nan(""));
    for (std::size_t i = 0; i < means.size(); ++i)
      if (n[i] > 0) e[i] = length(sum[i] * (1.0 / static_cast<double>(n[i])) - means[i]);
    return e;
  }

  const Scene& scene() const { return scene_; }
  const std::vector<Camera>& cameras() const { return cameras_; }
  const TextureField<T>& field() const { return field_; }
  TextureField<T>& field() { return field_; }
  const ReferenceTokens<T>& references() const { return refs_; }
  const std::vector<Vec3>& reference_means() const { return ref_means_; }

 private:
  Scene scene_;
  std::vector<Camera> cameras_;
  TextureField<T> field_;
  ReferenceTokens<T> refs_;
  std::vector<Vec3> ref_means_;
};

// theta is the latent itself: identity render and identity codec, no
// conditioning. Used against the analytic Gaussian oracle.
template <typename T>
class PixelParticle : public Particle<T> {
 public:
  explicit PixelParticle(Tensor<T> x) : x_(std::move(x)) {}
  std::size_t view_count() const override { return 1; }
  std::span<T> params() override { return x_.vec(); }
  std::span<const T> params() const override { return x_.vec(); }
  FrameInputs<T> render(std::size_t) const override {
    FrameInputs<T> f;
    f.image = x_;
    f.latent = x_;
    return f;
  }
  void backward(const FrameInputs<T>&, const Tensor<T>& d_latent, std::span<T> grad) const override {
    for (std::size_t i = 0; i < d_latent.size(); ++i) grad[i] += d_latent[i];
  }
  const Tensor<T>& value() const { return x_; }

 private:
  Tensor<T> x_;
};

// ---------------------------------------------------------------------------
// Gradients

// w(t) (eps_a - eps_b) pushed through d x_t / d theta = alpha_t d latent / d theta.
// Returns the latent-space difference term.
template <typename T>
Tensor<T> score_gradient(const Particle<T>& particle, const FrameInputs<T>& f, const Tensor<T>& eps_a, const Tensor<T>& eps_b,
                         double t, const NoiseSchedule& sched, std::span<T> grad) {
  const T w = static_cast<T>(sched.weight(t));
  const T a = static_cast<T>(sched.alpha(t));
  Tensor<T> g(eps_a.shape()), d(eps_a.shape());
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] = w * (eps_a[i] - eps_b[i]);
    d[i] = a * g[i];
  }
  particle.backward(f, d, grad);
  return g;
}

// Variational score distillation gradient with respect to theta.
template <typename T>
Tensor<T> vsd_gradient(const Particle<T>& particle, const FrameInputs<T>& f, const NoisePredictor<T>& teacher,
                       const NoisePredictor<T>& adapter, double t, const Tensor<T>& eps, const NoiseSchedule& sched,
                       std::span<T> grad) {
  const Tensor<T> x_t = sched.add_noise(f.latent, t, eps);
  return score_gradient(particle, f, teacher.predict(x_t, t, f.cond), adapter.predict(x_t, t, f.cond), t, sched, grad);
}

template <typename T>
Conditioning<T> sr_conditioning(const FrameInputs<T>& f) {
  Conditioning<T> c;
  c.source = f.latent;
  return c;
}

// Super-resolution distillation gradient with respect to theta.
template <typename T>
Tensor<T> sr_gradient(const Particle<T>& particle, const FrameInputs<T>& f, const NoisePredictor<T>& sr, const NoisePredictor<T>& adapter,
                      double t, const Tensor<T>& eps, const NoiseSchedule& sched, std::span<T> grad) {
  const Tensor<T> x_t = sched.add_noise(f.latent, t, eps);
  return score_gradient(particle, f, sr.predict(x_t, t, sr_conditioning(f)), adapter.predict(x_t, t, f.cond), t, sched, grad);
}

template <typename T>
bool all_finite(std::span<const T> v) {
  for (T x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

class DivergenceError : public Error {
 public:
  using Error::Error;
};

// One optimizer step on ||eps_adapter(x_t) - eps||^2 (mean over elements)
// with theta fixed. Returns the loss before the step.
template <typename T>
double adapter_step(AdaptablePredictor<T>& adapter, Adam<T>& opt, const Tensor<T>& x0, const Conditioning<T>& cond, double t,
                    const Tensor<T>& eps, const NoiseSchedule& sched) {
  const Tensor<T> x_t = sched.add_noise(x0, t, eps);
  std::vector<T> grad(adapter.adapter_params().size(), T(0));
  double loss = 0;
  adapter.predict_vjp(
      x_t, t, cond,
      [&](const Tensor<T>& pred) {
        Tensor<T> up(pred.shape());
        const T scale = T(2) / static_cast<T>(pred.size());
        double s = 0;
        for (std::size_t i = 0; i < pred.size(); ++i) {
          const T d = pred[i] - eps[i];
          s += static_cast<double>(d) * d;
          up[i] = scale * d;
        }
        loss = s / static_cast<double>(pred.size());
        return up;
      },
      grad);
  if (!std::isfinite(loss) || !all_finite<T>(grad)) throw DivergenceError(str_cat("adapter_step: non-finite loss or gradient (t = ", t, ")"));
  opt.step(adapter.adapter_params(), grad);
  return loss;
}

// ---------------------------------------------------------------------------
// Optimization state and the alternating loop

template <typename T>
struct OptimState {
  int iteration = 0;
  Rng view_rng, time_rng, noise_rng;
  Adam<T> theta_opt, phi_opt;
  double adapter_loss_ema = 0;  // exponential, decay 0.99
  double vsd_norm_ema = 0;

  OptimState() = default;
  OptimState(const DistillConfig& cfg, std::size_t n_theta, std::size_t n_phi)
      : view_rng(derive_seed(cfg.seed, 0x76696577ull)),
        time_rng(derive_seed(cfg.seed, 0x74696d65ull)),
        noise_rng(derive_seed(cfg.seed, 0x6e6f6973ull)),
        theta_opt(n_theta, {cfg.lr_texture}),
        phi_opt(n_phi, {cfg.lr_adapter}) {}
};

struct StepRecord {
  int iteration = 0;
  std::size_t view = 0;
  double t = 0;
  double lambda_sr = 0;
  double vsd_norm = 0;  // ||d L_VSD / d theta||
  double sr_norm = 0;   // ||d L_SR / d theta||
  double adapter_loss = 0;
  std::vector<double> color_errors;
};

template <typename T>
double l2_norm(std::span<const T> v) {
  double s = 0;
  for (T x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

template <typename T>
class Distiller {
 public:
  Distiller(const DistillConfig& cfg, Particle<T>& particle, const NoisePredictor<T>& teacher, AdaptablePredictor<T>& adapter,
            const NoisePredictor<T>* sr)
      : cfg_(cfg), particle_(particle), teacher_(teacher), adapter_(adapter), sr_(sr),
        state_(cfg, particle.params().size(), adapter.adapter_params().size()) {
    cfg_.validate();
    sched_.weighting = cfg_.weighting;
    if (!cfg_.feature_masks) {
      masked_teacher_ = std::make_unique<NoiseMaskedPredictor<T>>(teacher_);
      masked_adapter_ = std::make_unique<NoiseMaskedAdaptable<T>>(adapter_);
    }
  }

  StepRecord combined_step() {
    StepRecord r;
    const int iter = state_.iteration;
    r.iteration = iter;
    r.view = state_.view_rng.index(particle_.view_count());
    r.t = sample_timestep(state_.time_rng, cfg_, iter);
    r.lambda_sr = cfg_.use_sr && sr_ ? cfg_.lambda_at(iter) : 0.0;

    const FrameInputs<T> f = particle_.render(r.view);
    Tensor<T> eps(f.latent.shape());
    state_.noise_rng.fill_normal(eps);
    const Tensor<T> x_t = sched_.add_noise(f.latent, r.t, eps);

    const NoisePredictor<T>& teacher = masked_teacher_ ? *masked_teacher_ : teacher_;
    AdaptablePredictor<T>& adapter = masked_adapter_ ? *masked_adapter_ : adapter_;
    const Tensor<T> eps_lora = adapter.predict(x_t, r.t, f.cond);

    const std::size_t n = particle_.params().size();
    std::vector<T> grad(n, T(0));
    score_gradient(particle_, f, teacher.predict(x_t, r.t, f.cond), eps_lora, r.t, sched_, std::span<T>(grad));
    r.vsd_norm = l2_norm<T>(grad);
    if (r.lambda_sr > 0) {
      std::vector<T> g_sr(n, T(0));
      score_gradient(particle_, f, sr_->predict(x_t, r.t, sr_conditioning(f)), eps_lora, r.t, sched_, std::span<T>(g_sr));
      r.sr_norm = l2_norm<T>(g_sr);
      const T lam = static_cast<T>(r.lambda_sr);
      for (std::size_t i = 0; i < n; ++i) grad[i] += lam * g_sr[i];
    }
    if (!all_finite<T>(grad))
      throw DivergenceError(str_cat("combined_step: non-finite texture gradient at iteration ", iter, " (t = ", r.t, ", view ", r.view, ")"));
    r.color_errors = particle_.color_errors(f);
    state_.theta_opt.step(particle_.params(), grad);

    if (cfg_.adapter_steps > 0) {
      const FrameInputs<T> f2 = particle_.render(r.view);
      for (int k = 0; k < cfg_.adapter_steps; ++k)
        r.adapter_loss = adapter_step(adapter, state_.phi_opt, f2.latent, f2.cond, r.t, eps, sched_);
    }
    state_.adapter_loss_ema = iter == 0 ? r.adapter_loss : 0.99 * state_.adapter_loss_ema + 0.01 * r.adapter_loss;
    state_.vsd_norm_ema = iter == 0 ? r.vsd_norm : 0.99 * state_.vsd_norm_ema + 0.01 * r.vsd_norm;
    ++state_.iteration;
    return r;
  }

  // Runs to cfg.iterations. With a run directory: metrics.csv every
  // log_every iterations and a checkpoint bundle every checkpoint_every
  // iterations and at the end. A run directory holding a checkpoint is
  // resumed when resume is set.
  void run(const std::string& run_dir = {}, bool resume = false, const std::function<void(const StepRecord&)>& on_step = {}) {
    namespace fs = std::filesystem;
    std::vector<std::string> rows;
    if (!run_dir.empty()) {
      fs::create_directories(run_dir);
      const fs::path ck = fs::path(run_dir) / "checkpoint";
      if (resume && fs::exists(ck / "state.bin")) {
        load_checkpoint(ck.string());
        rows = read_metrics(run_dir, state_.iteration);
      }
    }
    while (state_.iteration < cfg_.iterations) {
      const StepRecord r = combined_step();
      if (on_step) on_step(r);
      if (!run_dir.empty() && (r.iteration % cfg_.log_every == 0 || state_.iteration == cfg_.iterations)) {
        rows.push_back(metrics_row(r));
        write_metrics(run_dir, rows);
      }
      if (!run_dir.empty() && (state_.iteration % cfg_.checkpoint_every == 0 || state_.iteration == cfg_.iterations))
        save_checkpoint((fs::path(run_dir) / "checkpoint").string());
    }
  }

  // Bundle: state.bin (exact theta, phi, optimizer moments, counters),
  // rng.txt, config.txt, plus field.wtfx / adapter.wmdl when the particle
  // and adapter have those forms. Written to a sibling and swapped in.
  void save_checkpoint(const std::string& dir) const {
    namespace fs = std::filesystem;
    const fs::path tmp = fs::path(dir).string() + ".tmp";
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    {
      std::ofstream os(tmp / "state.bin", std::ios::binary);
      os.write("WSTATE1", 7);
      const std::int32_t it = state_.iteration;
      os.write(reinterpret_cast<const char*>(&it), 4);
      write_span(os, particle_.params());
      write_span(os, std::as_const(adapter_).adapter_params());
      state_.theta_opt.write(os);
      state_.phi_opt.write(os);
      os.write(reinterpret_cast<const char*>(&state_.adapter_loss_ema), 8);
      os.write(reinterpret_cast<const char*>(&state_.vsd_norm_ema), 8);
      if (!os) throw Error(str_cat("checkpoint: write failed in ", tmp.string()));
    }
    {
      std::ofstream os(tmp / "rng.txt");
      os << state_.view_rng.save() << "\n" << state_.time_rng.save() << "\n" << state_.noise_rng.save() << "\n";
    }
    {
      std::ofstream os(tmp / "config.txt");
      os << "iteration = " << state_.iteration << "\n";
      for (const auto& [k, v] : cfg_.entries()) os << k << " = " << v << "\n";
    }
    if (const auto* sp = dynamic_cast<const SceneParticle<T>*>(&particle_)) save_field(sp->field(), (tmp / "field.wtfx").string());
    if (const auto* am = dynamic_cast<const AdapterModel<T>*>(&adapter_))
      save_lora(am->deltas(), am->base().config(), (tmp / "adapter.wmdl").string());
    fs::remove_all(dir);
    fs::rename(tmp, dir);
  }

  void load_checkpoint(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream is(fs::path(dir) / "state.bin", std::ios::binary);
    if (!is) throw Error(str_cat("checkpoint: no state.bin in ", dir));
    char magic[7];
    is.read(magic, 7);
    if (!is || std::memcmp(magic, "WSTATE", 6) != 0) throw Error(str_cat("checkpoint: bad state magic in ", dir));
    if (magic[6] != '1') throw VersionError(str_cat("checkpoint: unsupported state version ", magic[6]));
    std::int32_t it = 0;
    is.read(reinterpret_cast<char*>(&it), 4);
    read_span(is, particle_.params(), "texture parameters");
    read_span(is, adapter_.adapter_params(), "adapter parameters");
    state_.theta_opt.read(is);
    state_.phi_opt.read(is);
    is.read(reinterpret_cast<char*>(&state_.adapter_loss_ema), 8);
    is.read(reinterpret_cast<char*>(&state_.vsd_norm_ema), 8);
    if (!is) throw Error(str_cat("checkpoint: truncated state in ", dir));
    state_.iteration = it;
    std::ifstream rs(fs::path(dir) / "rng.txt");
    std::string a, b, c;
    if (!std::getline(rs, a) || !std::getline(rs, b) || !std::getline(rs, c)) throw Error(str_cat("checkpoint: malformed rng.txt in ", dir));
    state_.view_rng.restore(a);
    state_.time_rng.restore(b);
    state_.noise_rng.restore(c);
  }

  const DistillConfig& config() const { return cfg_; }
  const OptimState<T>& state() const { return state_; }
  OptimState<T>& state() { return state_; }
  const NoiseSchedule& schedule() const { return sched_; }

  static std::string metrics_header(std::size_t instances) {
    std::string h = "iteration,t,lambda_sr,vsd_grad_norm,sr_grad_norm,adapter_loss";
    for (std::size_t i = 0; i < instances; ++i) h += str_cat(",color_error_", i);
    return h;
  }

 private:
  static std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
  }
  std::string metrics_row(const StepRecord& r) const {
    std::string s = str_cat(r.iteration, ",", fmt(r.t), ",", fmt(r.lambda_sr), ",", fmt(r.vsd_norm), ",", fmt(r.sr_norm), ",", fmt(r.adapter_loss));
    for (double e : r.color_errors) s += "," + fmt(e);
    return s;
  }
  void write_metrics(const std::string& dir, const std::vector<std::string>& rows) const {
    std::ofstream os(std::filesystem::path(dir) / "metrics.csv");
    const auto* sp = dynamic_cast<const SceneParticle<T>*>(&particle_);
    os << metrics_header(sp ? static_cast<std::size_t>(sp->scene().instance_count) : 0) << "\n";
    for (const auto& r : rows) os << r << "\n";
  }
  // Rows logged before the checkpoint, minus a final row the earlier run
  // wrote off the log cadence.
  std::vector<std::string> read_metrics(const std::string& dir, int before) const {
    std::vector<std::string> rows;
    std::ifstream is(std::filesystem::path(dir) / "metrics.csv");
    std::string line;
    if (!std::getline(is, line)) return rows;
    while (std::getline(is, line)) {
      const int it = std::stoi(line.substr(0, line.find(',')));
      if (it < before && it % cfg_.log_every == 0) rows.push_back(line);
    }
    return rows;
  }
  static void write_span(std::ostream& os, std::span<const T> v) {
    const std::uint64_t n = v.size();
    os.write(reinterpret_cast<const char*>(&n), 8);
    os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)));
  }
  static void read_span(std::istream& is, std::span<T> v, const char* what) {
    std::uint64_t n = 0;
    is.read(reinterpret_cast<char*>(&n), 8);
    if (!is || n != v.size()) throw Error(str_cat("checkpoint: ", what, " count ", n, " does not match ", v.size()));
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)));
  }

  DistillConfig cfg_;
  Particle<T>& particle_;
  const NoisePredictor<T>& teacher_;
  AdaptablePredictor<T>& adapter_;
  const NoisePredictor<T>* sr_;
  std::unique_ptr<NoiseMaskedPredictor<T>> masked_teacher_;
  std::unique_ptr<NoiseMaskedAdaptable<T>> masked_adapter_;
  NoiseSchedule sched_;
  OptimState<T> state_;
};

// Scene particle over config.view_count sampled viewpoints.
template <typename T>
SceneParticle<T> make_scene_particle(const Scene& scene, const std::vector<Tensor<float>>& references, const DistillConfig& cfg,
                                     const HashGridConfig& grid = {}) {
  ViewpointOptions vo;
  vo.width = vo.height = cfg.render_size;
  auto cams = sample_viewpoints(scene, cfg.view_count, derive_seed(cfg.seed, 0x63616d73ull), vo);
  return SceneParticle<T>(scene, std::move(cams), TextureField<T>::initialized(grid, derive_seed(cfg.seed, 0x6669656cull)), references,
                          cfg.multi_ref);
}

}  // namespace weave
