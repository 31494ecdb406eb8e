// Copyright 2026 The Weave Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "weave/raster.hpp"
#include "weave/texture_field.hpp"

namespace weave {

// Forward state of one shading pass, kept for the backward pass.
template <typename T>
struct ShadeCache {
  std::vector<std::size_t> pixels;  // valid pixel indices in scan order
  Embeddings<T> embeddings;
  DecoderCache<T> decoder;
};

// RGB (3, H, W): valid pixels take field.sample(uv), background is 0.
// UV buffers are constants; the image is differentiable in the field params.
template <typename T>
Tensor<T> shade(const GBuffer& g, const TextureField<T>& field, ShadeCache<T>* cache = nullptr) {
  ShadeCache<T> local;
  ShadeCache<T>& c = cache ? *cache : local;
  c.pixels.clear();
  for (std::size_t i = 0; i < g.pixel_count(); ++i)
    if (g.valid(i)) c.pixels.push_back(i);
  Tensor<T> img({3, g.height, g.width});
  if (c.pixels.empty()) return img;
  Tensor<T> uvs({static_cast<int>(c.pixels.size()), 2});
  for (std::size_t k = 0; k < c.pixels.size(); ++k) {
    uvs.at(static_cast<int>(k), 0) = static_cast<T>(g.uv[c.pixels[k]].x);
    uvs.at(static_cast<int>(k), 1) = static_cast<T>(g.uv[c.pixels[k]].y);
  }
  c.embeddings = field.encode_uv(uvs);
  const Tensor<T> rgb = field.decode(c.embeddings.values, &c.decoder);
  const std::size_t plane = g.pixel_count();
  for (std::size_t k = 0; k < c.pixels.size(); ++k)
    for (int ch = 0; ch < 3; ++ch) img[ch * plane + c.pixels[k]] = rgb.at(static_cast<int>(k), ch);
  return img;
}

// Accumulates d<d_image, shade(g, field)>/d(params) into grad.
template <typename T>
void shade_backward(const GBuffer& g, const TextureField<T>& field, const ShadeCache<T>& c, const Tensor<T>& d_image,
                    std::span<T> grad) {
  if (c.pixels.empty()) return;
  const std::size_t plane = g.pixel_count();
  Tensor<T> d_rgb({static_cast<int>(c.pixels.size()), 3});
  for (std::size_t k = 0; k < c.pixels.size(); ++k)
    for (int ch = 0; ch < 3; ++ch) d_rgb.at(static_cast<int>(k), ch) = d_image[ch * plane + c.pixels[k]];
  field.backward(c.embeddings, c.decoder, d_rgb, grad);
}

}  // namespace weave
