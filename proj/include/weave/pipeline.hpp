// Copyright 2026 The Weave Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "weave/codec.hpp"
#include "weave/conditioning.hpp"
#include "weave/raster.hpp"
#include "weave/render.hpp"
#include "weave/unet.hpp"

namespace weave {

// Reference tokens as routed to the denoisers. Stitched: one token set from
// all references side by side, masked by the whole valid region.
template <typename T>
struct ReferenceTokens {
  std::vector<Tensor<T>> tokens;
  bool stitched = false;

  static ReferenceTokens multi(const std::vector<Tensor<float>>& images) {
    ReferenceTokens r;
    for (const auto& im : images) r.tokens.push_back(extract_reference_features<T>(im));
    return r;
  }
  static ReferenceTokens single_stitched(const std::vector<Tensor<float>>& images) {
    ReferenceTokens r;
    r.tokens.push_back(extract_reference_features<T>(stitch_references(images)));
    r.stitched = true;
    return r;
  }
};

// Depth at latent resolution and per-token-set masks at image resolution.
template <typename T>
Conditioning<T> frame_conditioning(const GBuffer& g, int instance_count, const ReferenceTokens<T>& refs) {
  Conditioning<T> c;
  c.depth = ops::avgpool2(depth_image<T>(g));
  c.tokens = refs.tokens;
  if (refs.stitched) {
    c.masks = {validity_mask<T>(g)};
  } else {
    if (static_cast<int>(refs.tokens.size()) != instance_count)
      throw Error(str_cat("frame_conditioning: ", refs.tokens.size(), " references for ", instance_count, " instances"));
    c.masks = instance_masks<T>(g, instance_count);
  }
  return c;
}

// Everything one distillation step consumes for a single view.
template <typename T>
struct FrameInputs {
  GBuffer gbuffer;
  Tensor<T> image;   // (3, H, W)
  Tensor<T> latent;  // (4, H/2, W/2)
  Conditioning<T> cond;
  ShadeCache<T> shade;
};

template <typename T>
FrameInputs<T> render_step_inputs(const Mesh& mesh, int instance_count, const TextureField<T>& field, const Camera& cam,
                                  const ReferenceTokens<T>& refs) {
  FrameInputs<T> f;
  f.gbuffer = rasterize(mesh, cam);
  f.image = shade(f.gbuffer, field, &f.shade);
  f.latent = LatentCodec::encode(f.image);
  f.cond = frame_conditioning(f.gbuffer, instance_count, refs);
  return f;
}

}  // namespace weave
