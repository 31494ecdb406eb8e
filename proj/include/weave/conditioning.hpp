// Copyright 2026 The Weave Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "weave/autodiff.hpp"
#include "weave/rng.hpp"
#include "weave/tensor.hpp"

namespace weave {

inline constexpr int kRefSide = 32;
inline constexpr int kRefPatch = 8;
inline constexpr int kRefTokens = (kRefSide / kRefPatch) * (kRefSide / kRefPatch);  // K = 16
inline constexpr int kRefRawFeatures = 6;                                           // 3 means + 3 gradient stats
inline constexpr int kRefTokenDim = 32;                                              // d_f
inline constexpr std::uint64_t kRefProjectionSeed = 0x5eedf00dull;

// Area-weighted resampling of (C, H, W) to (C, h, w). Exact box averaging for
// any ratio; for upsampling it degenerates to nearest-neighbour replication.
template <typename T>
Tensor<T> resize_area(const Tensor<T>& src, int h, int w) {
  const int C = src.dim(0), H = src.dim(1), W = src.dim(2);
  if (H == h && W == w) return src;
  auto weights = [](int n_src, int n_dst) {
    // per destination index: list of (source index, weight) summing to 1
    std::vector<std::vector<std::pair<int, double>>> out(static_cast<std::size_t>(n_dst));
    const double scale = static_cast<double>(n_src) / n_dst;
    for (int d = 0; d < n_dst; ++d) {
      const double a = d * scale, b = (d + 1) * scale;
      for (int s = static_cast<int>(std::floor(a)); s < std::min(n_src, static_cast<int>(std::ceil(b))); ++s) {
        const double ov = std::min<double>(b, s + 1) - std::max<double>(a, s);
        if (ov > 0) out[static_cast<std::size_t>(d)].push_back({s, ov / scale});
      }
    }
    return out;
  };
  const auto wy = weights(H, h), wx = weights(W, w);
  Tensor<T> out({C, h, w});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0;
        for (auto [sy, ay] : wy[static_cast<std::size_t>(y)])
          for (auto [sx, ax] : wx[static_cast<std::size_t>(x)]) acc += ay * ax * static_cast<double>(src.at(c, sy, sx));
        out.at(c, y, x) = static_cast<T>(acc);
      }
  return out;
}

// Fixed projection from the 6 raw patch statistics to d_f.
inline const Tensor<double>& reference_projection() {
  static const Tensor<double> proj = [] {
    Tensor<double> p({kRefRawFeatures, kRefTokenDim});
    Rng rng(kRefProjectionSeed);
    rng.fill_normal(p, 1.0 / std::sqrt(static_cast<double>(kRefRawFeatures)));
    return p;
  }();
  return proj;
}

// Raw per-patch statistics (K, 6): RGB means, then mean |dL/dx|, mean |dL/dy|
// and mean gradient magnitude of luminance (forward differences inside the patch).
inline Tensor<double> reference_patch_statistics(const Tensor<float>& image) {
  if (image.empty() || image.rank() != 3 || image.dim(0) != 3) throw Error("reference features: expected a nonempty RGB image");
  const Tensor<double> img = resize_area(image.cast<double>(), kRefSide, kRefSide);
  const int per_side = kRefSide / kRefPatch;
  Tensor<double> stats({kRefTokens, kRefRawFeatures});
  auto lum = [&](int y, int x) { return 0.2126 * img.at(0, y, x) + 0.7152 * img.at(1, y, x) + 0.0722 * img.at(2, y, x); };
  for (int py = 0; py < per_side; ++py)
    for (int px = 0; px < per_side; ++px) {
      const int k = py * per_side + px;
      const int y0 = py * kRefPatch, x0 = px * kRefPatch;
      for (int c = 0; c < 3; ++c) {
        double s = 0;
        for (int y = 0; y < kRefPatch; ++y)
          for (int x = 0; x < kRefPatch; ++x) s += img.at(c, y0 + y, x0 + x);
        stats.at(k, c) = s / (kRefPatch * kRefPatch);
      }
      double gx = 0, gy = 0, gm = 0;
      const int n = (kRefPatch - 1) * (kRefPatch - 1);
      for (int y = 0; y < kRefPatch - 1; ++y)
        for (int x = 0; x < kRefPatch - 1; ++x) {
          const double dx = lum(y0 + y, x0 + x + 1) - lum(y0 + y, x0 + x);
          const double dy = lum(y0 + y + 1, x0 + x) - lum(y0 + y, x0 + x);
          gx += std::abs(dx);
          gy += std::abs(dy);
          gm += std::sqrt(dx * dx + dy * dy);
        }
      stats.at(k, 3) = gx / n;
      stats.at(k, 4) = gy / n;
      stats.at(k, 5) = gm / n;
    }
  return stats;
}

// Frozen reference encoder: image (3, H, W) in [0,1] -> tokens (K, d_f).
template <typename T = double>
Tensor<T> extract_reference_features(const Tensor<float>& image) {
  const Tensor<double> stats = reference_patch_statistics(image);
  const Tensor<double>& proj = reference_projection();
  Tensor<double> tok({kRefTokens, kRefTokenDim});
  as_mat(tok, kRefTokens, kRefTokenDim).noalias() =
      as_mat(stats, kRefTokens, kRefRawFeatures) * as_mat(proj, kRefRawFeatures, kRefTokenDim);
  return tok.cast<T>();
}

template <typename T>
struct ReferenceSet {
  std::vector<Tensor<float>> images;  // (3, H, W) each
  std::vector<Tensor<T>> tokens;      // (K, d_f) each, one per instance

  static ReferenceSet from_images(std::vector<Tensor<float>> imgs) {
    ReferenceSet r;
    r.images = std::move(imgs);
    for (const auto& im : r.images) r.tokens.push_back(extract_reference_features<T>(im));
    return r;
  }
  int count() const { return static_cast<int>(tokens.size()); }
};

// All reference images side by side (each resized to 32x32) as one image.
inline Tensor<float> stitch_references(const std::vector<Tensor<float>>& images) {
  if (images.empty()) throw Error("stitch_references: no images");
  const int n = static_cast<int>(images.size());
  Tensor<float> out({3, kRefSide, kRefSide * n});
  for (int i = 0; i < n; ++i) {
    const Tensor<float> r = resize_area(images[static_cast<std::size_t>(i)], kRefSide, kRefSide);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < kRefSide; ++y)
        for (int x = 0; x < kRefSide; ++x) out.at(c, y, i * kRefSide + x) = r.at(c, y, x);
  }
  return out;
}

template <typename T>
struct AttentionWeights {
  Tensor<T> w_q;  // (d_z, d_k)
  Tensor<T> w_k;  // (d_f, d_k)
  Tensor<T> w_v;  // (d_f, d_v)
};

namespace ops {

// Z' = (1/N) sum_i m_i * softmax(Q K_i^T / sqrt(d_k)) V_i with Q = Z W_q,
// K_i = f_i W_k, V_i = f_i W_v. z: (S, d_z); masks: N constant weights of S
// entries. With normalize set, 1/N becomes 1/sum_i m_i per position (0 where
// no mask covers the position).
template <typename T>
Var<T> masked_cross_attention(Tape<T>& tp, Var<T> z, const std::vector<Var<T>>& tokens, const std::vector<Tensor<T>>& masks,
                              Var<T> w_q, Var<T> w_k, Var<T> w_v, bool normalize = false) {
  const int S = tp.value(z).dim(0);
  const int N = static_cast<int>(tokens.size());
  if (N == 0) throw Error("masked_cross_attention: no references");
  if (static_cast<int>(masks.size()) != N)
    throw Error(str_cat("masked_cross_attention: ", masks.size(), " masks for ", N, " references"));
  for (const auto& m : masks)
    if (m.size() != static_cast<std::size_t>(S))
      throw Error(str_cat("masked_cross_attention: mask has ", m.size(), " positions, features have ", S));
  const int d_k = tp.value(w_q).dim(1);
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(d_k));

  std::vector<T> norm(static_cast<std::size_t>(S), T(1) / static_cast<T>(N));
  if (normalize) {
    for (int s = 0; s < S; ++s) {
      T tot = 0;
      for (const auto& m : masks) tot += m[static_cast<std::size_t>(s)];
      norm[static_cast<std::size_t>(s)] = tot > T(0) ? T(1) / tot : T(0);
    }
  }

  const Var<T> q = matmul(tp, z, w_q);
  std::vector<Var<T>> terms;
  for (int i = 0; i < N; ++i) {
    const Var<T> k = matmul(tp, tokens[static_cast<std::size_t>(i)], w_k);
    const Var<T> v = matmul(tp, tokens[static_cast<std::size_t>(i)], w_v);
    const Var<T> att = softmax_rows(tp, scale(tp, matmul_nt(tp, q, k), inv_sqrt));
    Tensor<T> w(masks[static_cast<std::size_t>(i)].reshaped({S}));
    for (int s = 0; s < S; ++s) w[static_cast<std::size_t>(s)] *= norm[static_cast<std::size_t>(s)];
    terms.push_back(scale_rows(tp, matmul(tp, att, v), w));
  }
  return sum(tp, terms);
}

}  // namespace ops

// Plain evaluation of the masked cross-attention. z: (S, d_z); tokens (K, d_f)
// per instance; masks with S entries each.
template <typename T>
Tensor<T> masked_cross_attention(const Tensor<T>& z, const std::vector<Tensor<T>>& tokens, const std::vector<Tensor<T>>& masks,
                                 const AttentionWeights<T>& w, bool normalize = false) {
  Tape<T> tp;
  std::vector<typename Tape<T>::Var> tv;
  for (const auto& t : tokens) tv.push_back(tp.constant(t));
  const auto out = ops::masked_cross_attention(tp, tp.constant(z), tv, masks, tp.constant(w.w_q), tp.constant(w.w_k),
                                               tp.constant(w.w_v), normalize);
  return tp.value(out);
}

template <typename T>
struct ResampledMask {
  Tensor<T> mask;  // (1, h, w)
  bool upsampled = false;
};

// Area-average downsampling to (h, w); upsampling falls back to nearest
// neighbour and is flagged.
template <typename T>
ResampledMask<T> resample_mask(const Tensor<T>& mask, int h, int w) {
  const int H = mask.dim(mask.rank() - 2), W = mask.dim(mask.rank() - 1);
  const Tensor<T> m = mask.reshaped({1, H, W});
  if (H == h && W == w) return {m, false};
  if (h <= H && w <= W) return {resize_area(m, h, w), false};
  Tensor<T> out({1, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int sy = std::min(H - 1, static_cast<int>((y + 0.5) * H / h));
      const int sx = std::min(W - 1, static_cast<int>((x + 0.5) * W / w));
      out.at(0, y, x) = m.at(0, sy, sx);
    }
  return {out, true};
}

// Noise-level instance masking: eps = (1/N) sum_i m_i * eps_i, masks (1, H, W)
// broadcast over the channels of eps_i (C, H, W).
template <typename T>
Tensor<T> noise_level_masking(const std::vector<Tensor<T>>& eps, const std::vector<Tensor<T>>& masks) {
  if (eps.empty()) throw Error("noise_level_masking: no predictions");
  if (eps.size() != masks.size()) throw Error(str_cat("noise_level_masking: ", eps.size(), " predictions for ", masks.size(), " masks"));
  const int C = eps[0].dim(0);
  const std::size_t plane = eps[0].size() / static_cast<std::size_t>(C);
  Tensor<T> out = Tensor<T>::zeros_like(eps[0]);
  const T inv = T(1) / static_cast<T>(eps.size());
  for (std::size_t i = 0; i < eps.size(); ++i) {
    if (!eps[i].same_shape(eps[0])) throw Error("noise_level_masking: prediction shape mismatch");
    if (masks[i].size() != plane) throw Error("noise_level_masking: mask size does not match prediction plane");
    for (int c = 0; c < C; ++c)
      for (std::size_t p = 0; p < plane; ++p) out[c * plane + p] += inv * masks[i][p] * eps[i][c * plane + p];
  }
  return out;
}

// Token cache: text header "WEAVE-TOKENS v1\n<N> <K> <d_f>\n" then N*K*d_f
// little-endian float32 values.
template <typename T>
void save_tokens(const std::vector<Tensor<T>>& tokens, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(str_cat("save_tokens: cannot open ", path));
  const int K = tokens.empty() ? 0 : tokens[0].dim(0), D = tokens.empty() ? 0 : tokens[0].dim(1);
  os << "WEAVE-TOKENS v1\n" << tokens.size() << ' ' << K << ' ' << D << '\n';
  for (const auto& t : tokens) {
    std::vector<float> buf(t.vec().begin(), t.vec().end());
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(4 * buf.size()));
  }
}

template <typename T>
std::vector<Tensor<T>> load_tokens(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(str_cat("load_tokens: cannot open ", path));
  std::string head;
  std::getline(is, head);
  if (head != "WEAVE-TOKENS v1") throw Error(str_cat("load_tokens: bad header '", head, "'"));
  int n = 0, K = 0, D = 0;
  is >> n >> K >> D;
  is.get();
  if (!is || n < 0 || K < 0 || D < 0) throw Error("load_tokens: bad dimensions");
  std::vector<Tensor<T>> out;
  for (int i = 0; i < n; ++i) {
    std::vector<float> buf(static_cast<std::size_t>(K) * D);
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(4 * buf.size()));
    if (!is) throw Error("load_tokens: truncated");
    out.emplace_back(std::vector<int>{K, D}, std::vector<T>(buf.begin(), buf.end()));
  }
  return out;
}

}  // namespace weave
