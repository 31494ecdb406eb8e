// Copyright 2026 The Weave Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "weave/raster.hpp"
#include "weave/rng.hpp"
#include "weave/scene.hpp"

namespace weave {

struct ViewpointOptions {
  std::array<double, 3> shell_radii{0.5, 0.7, 0.9};
  double jitter = 0.15;
  double target_inset = 0.1;  // fraction of the extent kept clear at each side
  double min_coverage = 0.01;
  int probe_resolution = 64;
  int max_retries = 100;
  int width = 64;
  int height = 64;
  double vertical_fov = std::numbers::pi / 3.0;
  double near = 0.01;
  double far = 100.0;
};

// Odd ray-crossing parity: inside the room shell but outside every closed
// furniture box.
inline bool in_free_space(const Mesh& mesh, const Vec3& p) {
  const Vec3 dir = normalize(Vec3{0.5773502691896258, 0.6123724356957945, 0.5400617248673217});
  int hits = 0;
  for (const auto& t : mesh.triangles) {
    const Vec3& a = mesh.positions[t.p[0]];
    const Vec3 e1 = mesh.positions[t.p[1]] - a;
    const Vec3 e2 = mesh.positions[t.p[2]] - a;
    const Vec3 h = cross(dir, e2);
    const double det = dot(e1, h);
    if (std::abs(det) < 1e-14) continue;
    const double inv = 1.0 / det;
    const Vec3 s = p - a;
    const double u = dot(s, h) * inv;
    if (u < 0 || u > 1) continue;
    const Vec3 q = cross(s, e1);
    const double v = dot(dir, q) * inv;
    if (v < 0 || u + v > 1) continue;
    if (dot(e2, q) * inv > 1e-12) ++hits;
  }
  return hits % 2 == 1;
}

inline double view_coverage(const Mesh& mesh, const Camera& cam, int res) {
  const GBuffer g = rasterize(mesh, cam, res, res);
  return static_cast<double>(g.valid_count()) / static_cast<double>(g.pixel_count());
}

// Cameras on three concentric shells around the bounds center, in box-normalized
// coordinates (a unit sphere scaled by the half extents), Fibonacci-lattice
// directions jittered by the seed; targets uniform in the inset bounds.
inline std::vector<Camera> sample_viewpoints(const Scene& scene, int count, std::uint64_t seed,
                                             const ViewpointOptions& opt = {}) {
  if (count < 1) throw Error("sample_viewpoints: count must be >= 1");
  if (!scene.bounds.valid()) throw Error("sample_viewpoints: scene bounds are empty");
  Rng rng(derive_seed(seed, 0x7669657770ull));
  const Vec3 center = scene.bounds.center();
  const Vec3 half = scene.bounds.half_extent();
  const Vec3 extent = scene.bounds.hi - scene.bounds.lo;
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));

  std::vector<Camera> cams;
  cams.reserve(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    const double radius = opt.shell_radii[static_cast<std::size_t>(k % 3)];
    const double z = 1.0 - 2.0 * (k + 0.5) / count;
    const double rxy = std::sqrt(std::max(0.0, 1.0 - z * z));
    const Vec3 lattice{rxy * std::cos(golden * k), z, rxy * std::sin(golden * k)};
    int attempt = 0;
    int fail_free = 0, fail_target = 0, fail_cover = 0;
    for (;; ++attempt) {
      if (attempt > opt.max_retries) {
        throw Error(str_cat("sample_viewpoints: could not place camera ", k, " after ", opt.max_retries,
                            " retries (outside free space: ", fail_free, ", degenerate target: ", fail_target,
                            ", coverage below ", opt.min_coverage, ": ", fail_cover, ")"));
      }
      Vec3 dir;
      if (attempt == 0) {
        dir = lattice + Vec3{rng.normal(), rng.normal(), rng.normal()} * opt.jitter;
      } else {
        dir = Vec3{rng.normal(), rng.normal(), rng.normal()};
      }
      if (length(dir) < 1e-12) continue;
      dir = normalize(dir);
      Camera c;
      c.position = center + hadamard(dir, half) * radius;
      c.target = scene.bounds.lo + hadamard(Vec3{opt.target_inset + (1 - 2 * opt.target_inset) * rng.uniform(),
                                                 opt.target_inset + (1 - 2 * opt.target_inset) * rng.uniform(),
                                                 opt.target_inset + (1 - 2 * opt.target_inset) * rng.uniform()},
                                            extent);
      c.vertical_fov = opt.vertical_fov;
      c.width = opt.width;
      c.height = opt.height;
      c.near = opt.near;
      c.far = opt.far;
      if (!in_free_space(scene.mesh, c.position)) {
        ++fail_free;
        continue;
      }
      if (length(c.target - c.position) < 1e-3 * length(extent)) {
        ++fail_target;
        continue;
      }
      const Vec3 fwd = normalize(c.target - c.position);
      c.up = std::abs(fwd.y) > 0.99 ? Vec3{0, 0, 1} : Vec3{0, 1, 0};
      if (view_coverage(scene.mesh, c, opt.probe_resolution) < opt.min_coverage) {
        ++fail_cover;
        continue;
      }
      cams.push_back(c);
      break;
    }
  }
  return cams;
}

}  // namespace weave
