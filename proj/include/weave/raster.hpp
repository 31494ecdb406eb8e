// Copyright 2026 The Weave Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "weave/scene.hpp"
#include "weave/tensor.hpp"

namespace weave {

// Per-pixel geometry of one view. Pixel (x, y) is stored at y * width + x,
// row 0 at the top. face < 0 marks background; uv and depth are NaN there.
struct GBuffer {
  int width = 0;
  int height = 0;
  int instance_count = 0;
  std::vector<Vec2> uv;
  std::vector<double> depth;
  std::vector<int> instance;
  std::vector<int> face;

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  bool valid(std::size_t i) const { return face[i] >= 0; }
  std::size_t valid_count() const {
    return static_cast<std::size_t>(std::count_if(face.begin(), face.end(), [](int f) { return f >= 0; }));
  }

  friend bool operator==(const GBuffer& a, const GBuffer& b) {
    auto same_d = [](double x, double y) { return (std::isnan(x) && std::isnan(y)) || x == y; };
    if (a.width != b.width || a.height != b.height || a.instance_count != b.instance_count || a.instance != b.instance ||
        a.face != b.face)
      return false;
    for (std::size_t i = 0; i < a.pixel_count(); ++i) {
      if (!same_d(a.depth[i], b.depth[i]) || !same_d(a.uv[i].x, b.uv[i].x) || !same_d(a.uv[i].y, b.uv[i].y)) return false;
    }
    return true;
  }
};

// World-to-camera frame: x right, y up, z = depth along the view direction.
struct CameraFrame {
  Vec3 origin, right, up, forward;
  double focal_y = 1, focal_x = 1;

  explicit CameraFrame(const Camera& c) : origin(c.position) {
    forward = normalize(c.target - c.position);
    Vec3 u = c.up;
    if (length(cross(forward, u)) < 1e-9) u = std::abs(forward.y) < 0.9 ? Vec3{0, 1, 0} : Vec3{0, 0, 1};
    right = normalize(cross(forward, u));
    up = cross(right, forward);
    focal_y = 1.0 / std::tan(0.5 * c.vertical_fov);
    focal_x = focal_y * static_cast<double>(c.height) / static_cast<double>(c.width);
  }

  Vec3 to_camera(const Vec3& p) const {
    const Vec3 d = p - origin;
    return {dot(d, right), dot(d, up), dot(d, forward)};
  }
};

namespace detail {

struct ClipVertex {
  Vec3 cam;
  Vec2 uv;
};

inline ClipVertex lerp(const ClipVertex& a, const ClipVertex& b, double s) {
  return {a.cam + (b.cam - a.cam) * s, {a.uv.x + (b.uv.x - a.uv.x) * s, a.uv.y + (b.uv.y - a.uv.y) * s}};
}

// Sutherland-Hodgman against the plane z = near.
inline std::vector<ClipVertex> clip_near(const std::array<ClipVertex, 3>& tri, double near) {
  std::vector<ClipVertex> out;
  for (int i = 0; i < 3; ++i) {
    const ClipVertex& a = tri[i];
    const ClipVertex& b = tri[(i + 1) % 3];
    const bool ina = a.cam.z >= near, inb = b.cam.z >= near;
    if (ina) out.push_back(a);
    if (ina != inb) out.push_back(lerp(a, b, (near - a.cam.z) / (b.cam.z - a.cam.z)));
  }
  return out;
}

}  // namespace detail

// z-buffered nearest hit at pixel centers with perspective-correct UVs.
// Ties in depth go to the lowest face id.
inline GBuffer rasterize(const Mesh& mesh, const Camera& camera, int width, int height) {
  if (width <= 0 || height <= 0) throw Error("rasterize: zero-area image");
  Camera cam = camera;
  cam.width = width;
  cam.height = height;
  validate_camera(cam);
  const CameraFrame frame(cam);

  GBuffer g;
  g.width = width;
  g.height = height;
  const std::size_t n = g.pixel_count();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  g.uv.assign(n, {nan, nan});
  g.depth.assign(n, nan);
  g.instance.assign(n, -1);
  g.face.assign(n, -1);
  std::vector<double> zbuf(n, std::numeric_limits<double>::infinity());
  int max_instance = -1;
  for (int id : mesh.face_instance) max_instance = std::max(max_instance, id);
  g.instance_count = max_instance + 1;

  struct ScreenVertex {
    double x, y, inv_z, u_over_z, v_over_z;
  };

  for (std::size_t f = 0; f < mesh.triangles.size(); ++f) {
    const Triangle& t = mesh.triangles[f];
    std::array<detail::ClipVertex, 3> tri;
    for (int k = 0; k < 3; ++k) tri[k] = {frame.to_camera(mesh.positions[t.p[k]]), mesh.uv_coords[t.uv[k]]};
    if (tri[0].cam.z < cam.near && tri[1].cam.z < cam.near && tri[2].cam.z < cam.near) continue;
    const auto poly = detail::clip_near(tri, cam.near);
    if (poly.size() < 3) continue;

    std::vector<ScreenVertex> sv;
    sv.reserve(poly.size());
    for (const auto& v : poly) {
      const double iz = 1.0 / v.cam.z;
      sv.push_back({(frame.focal_x * v.cam.x * iz + 1.0) * 0.5 * width, (1.0 - frame.focal_y * v.cam.y * iz) * 0.5 * height,
                    iz, v.uv.x * iz, v.uv.y * iz});
    }
    for (std::size_t k = 1; k + 1 < sv.size(); ++k) {
      const ScreenVertex& a = sv[0];
      const ScreenVertex& b = sv[k];
      const ScreenVertex& c = sv[k + 1];
      const double area = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
      if (area == 0.0 || !std::isfinite(area)) continue;
      const int x0 = std::max(0, static_cast<int>(std::floor(std::min({a.x, b.x, c.x}))));
      const int x1 = std::min(width - 1, static_cast<int>(std::ceil(std::max({a.x, b.x, c.x}))));
      const int y0 = std::max(0, static_cast<int>(std::floor(std::min({a.y, b.y, c.y}))));
      const int y1 = std::min(height - 1, static_cast<int>(std::ceil(std::max({a.y, b.y, c.y}))));
      for (int y = y0; y <= y1; ++y) {
        const double py = y + 0.5;
        for (int x = x0; x <= x1; ++x) {
          const double px = x + 0.5;
          const double w0 = ((b.x - px) * (c.y - py) - (b.y - py) * (c.x - px)) / area;
          const double w1 = ((c.x - px) * (a.y - py) - (c.y - py) * (a.x - px)) / area;
          const double w2 = 1.0 - w0 - w1;
          if (w0 < 0 || w1 < 0 || w2 < 0) continue;
          const double iz = w0 * a.inv_z + w1 * b.inv_z + w2 * c.inv_z;
          const double z = 1.0 / iz;
          if (!(z >= cam.near) || !(z < cam.far)) continue;
          const std::size_t i = static_cast<std::size_t>(y) * width + x;
          const int fid = static_cast<int>(f);
          if (z < zbuf[i] || (z == zbuf[i] && fid < g.face[i])) {
            zbuf[i] = z;
            g.depth[i] = z;
            const double u = std::clamp((w0 * a.u_over_z + w1 * b.u_over_z + w2 * c.u_over_z) * z, 0.0, 1.0);
            const double v = std::clamp((w0 * a.v_over_z + w1 * b.v_over_z + w2 * c.v_over_z) * z, 0.0, 1.0);
            g.uv[i] = {u, v};
            g.face[i] = fid;
            g.instance[i] = mesh.face_instance[f];
          }
        }
      }
    }
  }
  return g;
}

inline GBuffer rasterize(const Mesh& mesh, const Camera& camera) {
  return rasterize(mesh, camera, camera.width, camera.height);
}

// Indicator masks, shape (1, H, W) each; they partition the valid pixels.
template <typename T = double>
std::vector<Tensor<T>> instance_masks(const GBuffer& g, int n) {
  for (std::size_t i = 0; i < g.pixel_count(); ++i) {
    if (g.instance[i] >= n)
      throw Error(str_cat("instance_masks: instance id ", g.instance[i], " present but only ", n, " masks requested"));
  }
  std::vector<Tensor<T>> masks(static_cast<std::size_t>(n), Tensor<T>({1, g.height, g.width}));
  for (std::size_t i = 0; i < g.pixel_count(); ++i) {
    if (g.instance[i] >= 0) masks[static_cast<std::size_t>(g.instance[i])][i] = T(1);
  }
  return masks;
}

template <typename T = double>
Tensor<T> validity_mask(const GBuffer& g) {
  Tensor<T> m({1, g.height, g.width});
  for (std::size_t i = 0; i < g.pixel_count(); ++i) m[i] = g.valid(i) ? T(1) : T(0);
  return m;
}

// Per-frame min-max normalized depth; background 1, constant frames 0.
template <typename T = double>
Tensor<T> depth_image(const GBuffer& g) {
  Tensor<T> d({1, g.height, g.width}, T(1));
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t i = 0; i < g.pixel_count(); ++i) {
    if (!g.valid(i)) continue;
    lo = std::min(lo, g.depth[i]);
    hi = std::max(hi, g.depth[i]);
  }
  const double span = hi - lo;
  for (std::size_t i = 0; i < g.pixel_count(); ++i) {
    if (!g.valid(i)) continue;
    d[i] = span > 0 ? static_cast<T>((g.depth[i] - lo) / span) : T(0);
  }
  return d;
}

// ---------------------------------------------------------------------------
// WGBF1 blob: magic, int32 w, h, N, then row-major channels
// u, v, depth (float64) and instance, face (int32), little-endian.

inline void save_gbuffer(const GBuffer& g, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(str_cat("save_gbuffer: cannot open ", path));
  os.write("WGBF1", 5);
  const std::int32_t hdr[3] = {g.width, g.height, g.instance_count};
  os.write(reinterpret_cast<const char*>(hdr), sizeof hdr);
  for (const auto& uv : g.uv) os.write(reinterpret_cast<const char*>(&uv.x), 8);
  for (const auto& uv : g.uv) os.write(reinterpret_cast<const char*>(&uv.y), 8);
  os.write(reinterpret_cast<const char*>(g.depth.data()), static_cast<std::streamsize>(8 * g.depth.size()));
  for (int v : g.instance) {
    const std::int32_t x = v;
    os.write(reinterpret_cast<const char*>(&x), 4);
  }
  for (int v : g.face) {
    const std::int32_t x = v;
    os.write(reinterpret_cast<const char*>(&x), 4);
  }
  if (!os) throw Error(str_cat("save_gbuffer: write failed for ", path));
}

inline GBuffer load_gbuffer(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(str_cat("load_gbuffer: cannot open ", path));
  char magic[5];
  is.read(magic, 5);
  if (!is || std::memcmp(magic, "WGBF1", 5) != 0) throw Error("load_gbuffer: bad magic");
  std::int32_t hdr[3];
  is.read(reinterpret_cast<char*>(hdr), sizeof hdr);
  if (!is || hdr[0] <= 0 || hdr[1] <= 0 || hdr[2] < 0) throw Error("load_gbuffer: bad header");
  GBuffer g;
  g.width = hdr[0];
  g.height = hdr[1];
  g.instance_count = hdr[2];
  const std::size_t n = g.pixel_count();
  g.uv.resize(n);
  g.depth.resize(n);
  g.instance.resize(n);
  g.face.resize(n);
  for (auto& uv : g.uv) is.read(reinterpret_cast<char*>(&uv.x), 8);
  for (auto& uv : g.uv) is.read(reinterpret_cast<char*>(&uv.y), 8);
  is.read(reinterpret_cast<char*>(g.depth.data()), static_cast<std::streamsize>(8 * n));
  std::vector<std::int32_t> buf(n);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(4 * n));
  g.instance.assign(buf.begin(), buf.end());
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(4 * n));
  g.face.assign(buf.begin(), buf.end());
  if (!is) throw Error("load_gbuffer: truncated blob");
  return g;
}

}  // namespace weave
