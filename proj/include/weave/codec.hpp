// Copyright 2026 The Weave Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>

#include "weave/autodiff.hpp"
#include "weave/tensor.hpp"

namespace weave {

// Frozen linear latent codec. encode: 2x average pool of (2*img - 1), lifted
// from 3 to 4 channels by orthonormal columns. decode: transpose lift,
// nearest 2x upsample, (x + 1) / 2. decode(encode(.)) is the block-average
// projection.
struct LatentCodec {
  static constexpr int kLatentChannels = 4;
  // Columns 0..2 of the 4x4 Hadamard matrix / 2.
  static constexpr std::array<std::array<double, 3>, 4> kLift = {{
      {0.5, 0.5, 0.5},
      {0.5, -0.5, 0.5},
      {0.5, 0.5, -0.5},
      {0.5, -0.5, -0.5},
  }};

  template <typename T>
  static Tensor<T> encode(const Tensor<T>& img) {
    if (img.rank() != 3 || img.dim(0) != 3) throw Error("codec: expected an RGB image");
    Tensor<T> centered = img;
    for (auto& v : centered.vec()) v = T(2) * v - T(1);
    const Tensor<T> pooled = ops::avgpool2(centered);
    const int h = pooled.dim(1), w = pooled.dim(2);
    Tensor<T> z({kLatentChannels, h, w});
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int o = 0; o < kLatentChannels; ++o)
      for (std::size_t p = 0; p < plane; ++p) {
        T acc = 0;
        for (int c = 0; c < 3; ++c) acc += static_cast<T>(kLift[o][c]) * pooled[c * plane + p];
        z[o * plane + p] = acc;
      }
    return z;
  }

  template <typename T>
  static Tensor<T> decode(const Tensor<T>& z) {
    if (z.rank() != 3 || z.dim(0) != kLatentChannels) throw Error("codec: expected a 4-channel latent");
    const int h = z.dim(1), w = z.dim(2);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    Tensor<T> small({3, h, w});
    for (int c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < plane; ++p) {
        T acc = 0;
        for (int o = 0; o < kLatentChannels; ++o) acc += static_cast<T>(kLift[o][c]) * z[o * plane + p];
        small[c * plane + p] = acc;
      }
    Tensor<T> img = ops::upsample2(small);
    for (auto& v : img.vec()) v = (v + T(1)) / T(2);
    return img;
  }

  // d<dz, encode(img)>/d(img).
  template <typename T>
  static Tensor<T> encode_backward(const Tensor<T>& dz) {
    const int h = dz.dim(1), w = dz.dim(2);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    Tensor<T> dsmall({3, h, w});
    for (int c = 0; c < 3; ++c)
      for (std::size_t p = 0; p < plane; ++p) {
        T acc = 0;
        for (int o = 0; o < kLatentChannels; ++o) acc += static_cast<T>(kLift[o][c]) * dz[o * plane + p];
        dsmall[c * plane + p] = acc;
      }
    Tensor<T> dimg = ops::upsample2(dsmall);
    for (auto& v : dimg.vec()) v *= T(0.5);  // 2 (centering) * 1/4 (pool)
    return dimg;
  }

  // Mean over the latent plane, as a (1, h, w) map, of a (1, H, W) image-space map.
  template <typename T>
  static Tensor<T> downsample_map(const Tensor<T>& m) {
    return ops::avgpool2(m.reshaped({1, m.dim(m.rank() - 2), m.dim(m.rank() - 1)}));
  }
};

}  // namespace weave
