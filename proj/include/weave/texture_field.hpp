// Copyright 2026 The Weave Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "weave/autodiff.hpp"
#include "weave/rng.hpp"
#include "weave/scene.hpp"
#include "weave/tensor.hpp"

namespace weave {

struct HashGridConfig {
  int levels = 8;
  int base_resolution = 16;
  double growth_factor = 1.5;
  int table_log2 = 16;
  int features_per_level = 2;
  int hidden_width = 64;  // decoder

  int level_resolution(int l) const {
    return static_cast<int>(std::floor(base_resolution * std::pow(growth_factor, l)));
  }
  std::size_t table_size() const { return std::size_t{1} << table_log2; }
  int embedding_dim() const { return levels * features_per_level; }

  void validate() const {
    if (levels < 1) throw Error("hash grid: levels must be >= 1");
    if (base_resolution < 2) throw Error("hash grid: base resolution must be >= 2");
    if (!(growth_factor > 1)) throw Error("hash grid: growth factor must exceed 1");
    if (table_log2 < 1 || table_log2 > 30) throw Error("hash grid: table_log2 out of range [1,30]");
    if (features_per_level < 1) throw Error("hash grid: features per level must be >= 1");
    if (hidden_width < 1) throw Error("hash grid: decoder width must be >= 1");
  }
  friend bool operator==(const HashGridConfig&, const HashGridConfig&) = default;
};

inline constexpr std::uint32_t kHashPrimeX = 1u;
inline constexpr std::uint32_t kHashPrimeY = 2654435761u;

inline std::uint32_t grid_hash(std::uint32_t x, std::uint32_t y, int table_log2) {
  return ((x * kHashPrimeX) ^ (y * kHashPrimeY)) & ((1u << table_log2) - 1u);
}

template <typename T>
struct Embeddings {
  Tensor<T> values;  // (B, L*F)
  std::vector<std::array<std::uint32_t, 4>> rows;  // per (sample, level): corner rows
  std::vector<std::array<T, 4>> weights;           // per (sample, level): bilinear weights
  std::size_t clamped = 0;                          // uvs outside [0,1]^2
};

template <typename T>
struct DecoderCache {
  Tensor<T> h1_pre, h1, h2_pre, h2, out;
};

// Implicit UV -> RGB texture: multi-resolution hash grid plus a two-hidden-layer
// decoder with sigmoid output. Parameters are one flat vector: the L tables
// (level-major, row-major 2^T x F) followed by W1, b1, W2, b2, W3, b3.
template <typename T>
class TextureField {
 public:
  TextureField() : TextureField(HashGridConfig{}) {}
  explicit TextureField(const HashGridConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    layout();
    params_.assign(total_, T(0));
  }

  static TextureField initialized(const HashGridConfig& cfg, std::uint64_t seed) {
    TextureField f(cfg);
    Rng rng(derive_seed(seed, 0x74657866ull));
    for (std::size_t i = 0; i < f.table_params_; ++i) f.params_[i] = static_cast<T>(rng.uniform(-1e-4, 1e-4));
    auto init = [&](std::size_t off, int fan_in, std::size_t n) {
      const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (std::size_t i = 0; i < n; ++i) f.params_[off + i] = static_cast<T>(s * rng.normal());
    };
    const int E = cfg.embedding_dim(), Hd = cfg.hidden_width;
    init(f.w1_, E, static_cast<std::size_t>(E) * Hd);
    init(f.w2_, Hd, static_cast<std::size_t>(Hd) * Hd);
    init(f.w3_, Hd, static_cast<std::size_t>(Hd) * 3);
    return f;
  }

  const HashGridConfig& config() const { return cfg_; }
  std::span<T> params() { return params_; }
  std::span<const T> params() const { return params_; }
  std::size_t param_count() const { return total_; }
  std::size_t table_param_count() const { return table_params_; }

  template <typename U>
  TextureField<U> cast() const {
    TextureField<U> out(cfg_);
    std::copy(params_.begin(), params_.end(), out.params().begin());
    return out;
  }

  T* table(int level) { return params_.data() + static_cast<std::size_t>(level) * cfg_.table_size() * cfg_.features_per_level; }
  const T* table(int level) const {
    return params_.data() + static_cast<std::size_t>(level) * cfg_.table_size() * cfg_.features_per_level;
  }

  // uvs: (B, 2). Out-of-range coordinates are clamped and counted.
  Embeddings<T> encode_uv(const Tensor<T>& uvs) const {
    const int B = uvs.dim(0), L = cfg_.levels, F = cfg_.features_per_level;
    Embeddings<T> e;
    e.values = Tensor<T>({B, L * F});
    e.rows.resize(static_cast<std::size_t>(B) * L);
    e.weights.resize(static_cast<std::size_t>(B) * L);
    for (int b = 0; b < B; ++b) {
      T u = uvs.at(b, 0), v = uvs.at(b, 1);
      if (!(u >= 0 && u <= 1 && v >= 0 && v <= 1)) {
        ++e.clamped;
        u = std::isnan(u) ? T(0) : std::clamp(u, T(0), T(1));
        v = std::isnan(v) ? T(0) : std::clamp(v, T(0), T(1));
      }
      for (int l = 0; l < L; ++l) {
        const int res = cfg_.level_resolution(l);
        const T px = u * static_cast<T>(res), py = v * static_cast<T>(res);
        const int x0 = std::min(static_cast<int>(std::floor(px)), res - 1);
        const int y0 = std::min(static_cast<int>(std::floor(py)), res - 1);
        const T fx = px - static_cast<T>(x0), fy = py - static_cast<T>(y0);
        const auto ux = static_cast<std::uint32_t>(x0), uy = static_cast<std::uint32_t>(y0);
        const std::array<std::uint32_t, 4> rows = {grid_hash(ux, uy, cfg_.table_log2), grid_hash(ux + 1, uy, cfg_.table_log2),
                                                   grid_hash(ux, uy + 1, cfg_.table_log2),
                                                   grid_hash(ux + 1, uy + 1, cfg_.table_log2)};
        const std::array<T, 4> w = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
        const T* tab = table(l);
        for (int f = 0; f < F; ++f) {
          T acc = 0;
          for (int c = 0; c < 4; ++c) acc += w[c] * tab[static_cast<std::size_t>(rows[c]) * F + f];
          e.values.at(b, l * F + f) = acc;
        }
        e.rows[static_cast<std::size_t>(b) * L + l] = rows;
        e.weights[static_cast<std::size_t>(b) * L + l] = w;
      }
    }
    return e;
  }

  // embeddings: (B, L*F) -> RGB (B, 3) in [0,1].
  Tensor<T> decode(const Tensor<T>& emb, DecoderCache<T>* cache = nullptr) const {
    const int E = cfg_.embedding_dim(), Hd = cfg_.hidden_width;
    if (emb.rank() != 2 || emb.dim(1) != E)
      throw Error(str_cat("decode: embedding dimension ", emb.rank() == 2 ? emb.dim(1) : -1, " != ", E));
    DecoderCache<T> local;
    DecoderCache<T>& c = cache ? *cache : local;
    c.h1_pre = dense(emb, w1_, b1_, E, Hd);
    c.h1 = silu(c.h1_pre);
    c.h2_pre = dense(c.h1, w2_, b2_, Hd, Hd);
    c.h2 = silu(c.h2_pre);
    c.out = dense(c.h2, w3_, b3_, Hd, 3);
    for (auto& v : c.out.vec()) v = T(1) / (T(1) + std::exp(-v));
    return c.out;
  }

  Tensor<T> sample(const Tensor<T>& uvs) const { return decode(encode_uv(uvs).values); }

  // Accumulates d<d_rgb, sample(uvs)>/d(params) into grad. Returns d/d(embeddings).
  Tensor<T> backward(const Embeddings<T>& e, const DecoderCache<T>& c, const Tensor<T>& d_rgb, std::span<T> grad) const {
    const int B = d_rgb.dim(0), E = cfg_.embedding_dim(), Hd = cfg_.hidden_width, L = cfg_.levels, F = cfg_.features_per_level;
    if (grad.size() != total_) throw Error("texture field: gradient buffer size mismatch");
    Tensor<T> d_out({B, 3});
    for (std::size_t i = 0; i < d_out.size(); ++i) d_out[i] = d_rgb[i] * c.out[i] * (T(1) - c.out[i]);
    Tensor<T> d_h2 = dense_backward(c.h2, d_out, w3_, b3_, Hd, 3, grad);
    silu_backward(c.h2_pre, d_h2);
    Tensor<T> d_h1 = dense_backward(c.h1, d_h2, w2_, b2_, Hd, Hd, grad);
    silu_backward(c.h1_pre, d_h1);
    Tensor<T> d_emb = dense_backward(e.values, d_h1, w1_, b1_, E, Hd, grad);
    for (int b = 0; b < B; ++b) {
      for (int l = 0; l < L; ++l) {
        const auto& rows = e.rows[static_cast<std::size_t>(b) * L + l];
        const auto& w = e.weights[static_cast<std::size_t>(b) * L + l];
        T* gt = grad.data() + static_cast<std::size_t>(l) * cfg_.table_size() * F;
        for (int f = 0; f < F; ++f) {
          const T g = d_emb.at(b, l * F + f);
          if (g == T(0)) continue;
          for (int k = 0; k < 4; ++k) gt[static_cast<std::size_t>(rows[k]) * F + f] += w[k] * g;
        }
      }
    }
    return d_emb;
  }

  // Convenience: RGB of uvs plus a closure-free gradient pass.
  T sample_backward(const Tensor<T>& uvs, const Tensor<T>& d_rgb, std::span<T> grad) const {
    const auto e = encode_uv(uvs);
    DecoderCache<T> c;
    decode(e.values, &c);
    backward(e, c, d_rgb, grad);
    T s = 0;
    for (std::size_t i = 0; i < d_rgb.size(); ++i) s += d_rgb[i] * c.out[i];
    return s;
  }

  friend bool operator==(const TextureField& a, const TextureField& b) { return a.cfg_ == b.cfg_ && a.params_ == b.params_; }

 private:
  void layout() {
    const int E = cfg_.embedding_dim(), Hd = cfg_.hidden_width;
    table_params_ = static_cast<std::size_t>(cfg_.levels) * cfg_.table_size() * cfg_.features_per_level;
    std::size_t off = table_params_;
    auto take = [&](std::size_t n) {
      const std::size_t o = off;
      off += n;
      return o;
    };
    w1_ = take(static_cast<std::size_t>(E) * Hd);
    b1_ = take(static_cast<std::size_t>(Hd));
    w2_ = take(static_cast<std::size_t>(Hd) * Hd);
    b2_ = take(static_cast<std::size_t>(Hd));
    w3_ = take(static_cast<std::size_t>(Hd) * 3);
    b3_ = take(3);
    total_ = off;
  }

  Tensor<T> dense(const Tensor<T>& x, std::size_t w, std::size_t b, int in, int out) const {
    const int B = x.dim(0);
    Tensor<T> y({B, out});
    auto Y = as_mat(y, B, out);
    Y.noalias() = as_mat(x, B, in) * ConstMatMap<T>(params_.data() + w, in, out);
    const Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bias(params_.data() + b, out);
    Y.rowwise() += bias;
    return y;
  }

  Tensor<T> dense_backward(const Tensor<T>& x, const Tensor<T>& dy, std::size_t w, std::size_t b, int in, int out,
                           std::span<T> grad) const {
    const int B = x.dim(0);
    MatMap<T>(grad.data() + w, in, out).noalias() += as_mat(x, B, in).transpose() * as_mat(dy, B, out);
    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(grad.data() + b, out) += as_mat(dy, B, out).colwise().sum();
    Tensor<T> dx({B, in});
    as_mat(dx, B, in).noalias() = as_mat(dy, B, out) * ConstMatMap<T>(params_.data() + w, in, out).transpose();
    return dx;
  }

  static Tensor<T> silu(Tensor<T> x) {
    for (auto& v : x.vec()) v = v / (T(1) + std::exp(-v));
    return x;
  }
  static void silu_backward(const Tensor<T>& pre, Tensor<T>& d) {
    for (std::size_t i = 0; i < d.size(); ++i) {
      const T s = T(1) / (T(1) + std::exp(-pre[i]));
      d[i] *= s * (T(1) + pre[i] * (T(1) - s));
    }
  }

  HashGridConfig cfg_;
  std::vector<T> params_;
  std::size_t table_params_ = 0, total_ = 0;
  std::size_t w1_ = 0, b1_ = 0, w2_ = 0, b2_ = 0, w3_ = 0, b3_ = 0;
};

// ---------------------------------------------------------------------------
// Baking

// Texel-center coverage of the UV layout, (H, W) with row j at v = (j+0.5)/H.
inline std::vector<std::uint8_t> uv_coverage_mask(const Mesh& mesh, int width, int height) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(width) * height, 0);
  for (const auto& t : mesh.triangles) {
    const Vec2 a = mesh.uv_coords[t.uv[0]], b = mesh.uv_coords[t.uv[1]], c = mesh.uv_coords[t.uv[2]];
    const double area = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
    if (area == 0) continue;
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min({a.x, b.x, c.x}) * width)));
    const int x1 = std::min(width - 1, static_cast<int>(std::ceil(std::max({a.x, b.x, c.x}) * width)));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min({a.y, b.y, c.y}) * height)));
    const int y1 = std::min(height - 1, static_cast<int>(std::ceil(std::max({a.y, b.y, c.y}) * height)));
    for (int y = y0; y <= y1; ++y) {
      const double py = (y + 0.5) / height;
      for (int x = x0; x <= x1; ++x) {
        const double px = (x + 0.5) / width;
        const double w0 = ((b.x - px) * (c.y - py) - (b.y - py) * (c.x - px)) / area;
        const double w1 = ((c.x - px) * (a.y - py) - (c.y - py) * (a.x - px)) / area;
        if (w0 >= 0 && w1 >= 0 && w0 + w1 <= 1) mask[static_cast<std::size_t>(y) * width + x] = 1;
      }
    }
  }
  return mask;
}

// Texture image (3, H, W); texel (j, i) samples uv ((i+0.5)/W, (j+0.5)/H).
// Evaluation runs over tile x tile patches; texels outside validity are 0.
template <typename T>
Tensor<float> bake(const TextureField<T>& field, int width, int height, int tile, const std::vector<std::uint8_t>* validity = nullptr) {
  if (width <= 0 || height <= 0) throw Error("bake: resolution must be positive");
  if (tile <= 0) throw Error("bake: tile must be positive");
  if (validity && validity->size() != static_cast<std::size_t>(width) * height) throw Error("bake: validity mask size mismatch");
  Tensor<float> img({3, height, width});
  const std::size_t plane = static_cast<std::size_t>(width) * height;
  for (int ty = 0; ty < height; ty += tile) {
    for (int tx = 0; tx < width; tx += tile) {
      const int th = std::min(tile, height - ty), tw = std::min(tile, width - tx);
      Tensor<T> uvs({th * tw, 2});
      for (int j = 0; j < th; ++j)
        for (int i = 0; i < tw; ++i) {
          uvs.at(j * tw + i, 0) = static_cast<T>((tx + i + 0.5) / width);
          uvs.at(j * tw + i, 1) = static_cast<T>((ty + j + 0.5) / height);
        }
      const Tensor<T> rgb = field.sample(uvs);
      for (int j = 0; j < th; ++j)
        for (int i = 0; i < tw; ++i) {
          const std::size_t p = static_cast<std::size_t>(ty + j) * width + (tx + i);
          const bool ok = !validity || (*validity)[p];
          for (int c = 0; c < 3; ++c) img[c * plane + p] = ok ? static_cast<float>(rgb.at(j * tw + i, c)) : 0.0f;
        }
    }
  }
  return img;
}

// ---------------------------------------------------------------------------
// WTFX1 checkpoint: magic, int32 levels, base_resolution, table_log2,
// features_per_level, hidden_width, float64 growth_factor, uint64 count,
// then float32 params (tables, W1, b1, W2, b2, W3, b3), little-endian.

template <typename T>
void write_field(const TextureField<T>& f, std::ostream& os) {
  const auto& c = f.config();
  os.write("WTFX1", 5);
  const std::int32_t ints[5] = {c.levels, c.base_resolution, c.table_log2, c.features_per_level, c.hidden_width};
  os.write(reinterpret_cast<const char*>(ints), sizeof ints);
  os.write(reinterpret_cast<const char*>(&c.growth_factor), 8);
  const std::uint64_t n = f.param_count();
  os.write(reinterpret_cast<const char*>(&n), 8);
  std::vector<float> buf(f.params().begin(), f.params().end());
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(4 * buf.size()));
}

template <typename T>
TextureField<T> read_field(std::istream& is) {
  char magic[5];
  is.read(magic, 5);
  if (!is || std::memcmp(magic, "WTFX", 4) != 0) throw Error("field checkpoint: bad magic");
  if (magic[4] != '1') throw VersionError(str_cat("field checkpoint: unsupported version ", magic[4]));
  std::int32_t ints[5];
  HashGridConfig c;
  is.read(reinterpret_cast<char*>(ints), sizeof ints);
  is.read(reinterpret_cast<char*>(&c.growth_factor), 8);
  std::uint64_t n = 0;
  is.read(reinterpret_cast<char*>(&n), 8);
  if (!is) throw Error("field checkpoint: truncated header");
  c.levels = ints[0];
  c.base_resolution = ints[1];
  c.table_log2 = ints[2];
  c.features_per_level = ints[3];
  c.hidden_width = ints[4];
  TextureField<T> f(c);
  if (n != f.param_count()) throw Error("field checkpoint: parameter count does not match config");
  std::vector<float> buf(n);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(4 * n));
  if (!is) throw Error("field checkpoint: truncated parameters");
  std::copy(buf.begin(), buf.end(), f.params().begin());
  return f;
}

template <typename T>
void save_field(const TextureField<T>& f, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(str_cat("save_field: cannot open ", path));
  write_field(f, os);
  if (!os) throw Error(str_cat("save_field: write failed for ", path));
}

template <typename T>
TextureField<T> load_field(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(str_cat("load_field: cannot open ", path));
  return read_field<T>(is);
}

}  // namespace weave
