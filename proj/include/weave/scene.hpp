// Copyright 2026 The Weave Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "weave/tensor.hpp"
#include "weave/vec.hpp"

namespace weave {

struct Triangle {
  std::array<int, 3> p{};   // position indices
  std::array<int, 3> uv{};  // uv indices
  friend bool operator==(const Triangle&, const Triangle&) = default;
};

struct Mesh {
  std::vector<Vec3> positions;
  std::vector<Vec2> uv_coords;
  std::vector<Triangle> triangles;
  std::vector<int> face_instance;

  std::size_t face_count() const { return triangles.size(); }
  friend bool operator==(const Mesh&, const Mesh&) = default;
};

struct Scene {
  Mesh mesh;
  int instance_count = 0;
  std::vector<std::string> references;  // reference image per instance id
  Aabb bounds;

  friend bool operator==(const Scene&, const Scene&) = default;
};

struct Camera {
  Vec3 position;
  Vec3 target;
  Vec3 up{0, 1, 0};
  double vertical_fov = std::numbers::pi / 3.0;
  int width = 64;
  int height = 64;
  double near = 0.01;
  double far = 100.0;

  friend bool operator==(const Camera&, const Camera&) = default;
};

inline void validate_camera(const Camera& c) {
  if (!(c.near > 0)) throw Error("camera: near must be positive");
  if (!(c.far > c.near)) throw Error("camera: far must exceed near");
  if (c.position == c.target) throw Error("camera: position equals target");
  if (c.width <= 0 || c.height <= 0) throw Error("camera: zero-area image");
}

// ---------------------------------------------------------------------------
// Box-room construction

struct BoxFurniture {
  Aabb box;
  int instance = 0;
};

struct RoomSpec {
  Vec3 size{4, 3, 4};
  // floor, ceiling, -x wall, +x wall, -z wall, +z wall
  std::array<int, 6> shell_instances{0, 0, 0, 0, 0, 0};
  std::vector<BoxFurniture> furniture;
  std::vector<std::string> references;  // optional; defaults to ref_<id>.png
  int atlas_resolution = 1024;          // texels per atlas side
  double texels_per_unit = 0;           // <= 0 picks the densest packing that fits
  int gutter = 2;                       // texels of padding around each chart
};

namespace detail {

struct Quad {
  std::array<Vec3, 4> corners;
  int instance;
};

inline void add_box_quads(const Aabb& b, bool inward, const std::array<int, 6>& inst, std::vector<Quad>& out) {
  const Vec3& l = b.lo;
  const Vec3& h = b.hi;
  // Outward counter-clockwise winding; reversed for the room shell.
  std::array<std::array<Vec3, 4>, 6> faces = {{
      {{{l.x, l.y, l.z}, {h.x, l.y, l.z}, {h.x, l.y, h.z}, {l.x, l.y, h.z}}},  // -y (floor)
      {{{l.x, h.y, l.z}, {l.x, h.y, h.z}, {h.x, h.y, h.z}, {h.x, h.y, l.z}}},  // +y (ceiling)
      {{{l.x, l.y, l.z}, {l.x, l.y, h.z}, {l.x, h.y, h.z}, {l.x, h.y, l.z}}},  // -x
      {{{h.x, l.y, l.z}, {h.x, h.y, l.z}, {h.x, h.y, h.z}, {h.x, l.y, h.z}}},  // +x
      {{{l.x, l.y, l.z}, {l.x, h.y, l.z}, {h.x, h.y, l.z}, {h.x, l.y, l.z}}},  // -z
      {{{l.x, l.y, h.z}, {h.x, l.y, h.z}, {h.x, h.y, h.z}, {l.x, h.y, h.z}}},  // +z
  }};
  for (int f = 0; f < 6; ++f) {
    Quad q{faces[f], inst[f]};
    if (inward) std::swap(q.corners[1], q.corners[3]);
    out.push_back(q);
  }
}

struct Rect {
  int w, h;
  int x = 0, y = 0;
};

// Shelf packing, tallest first. Returns false on overflow.
inline bool shelf_pack(std::vector<Rect>& rects, int side) {
  std::vector<std::size_t> order(rects.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rects[a].h > rects[b].h; });
  int cx = 0, cy = 0, shelf_h = 0;
  for (std::size_t i : order) {
    Rect& r = rects[i];
    if (r.w > side) return false;
    if (cx + r.w > side) {
      cy += shelf_h;
      cx = 0;
      shelf_h = 0;
    }
    if (cy + r.h > side) return false;
    r.x = cx;
    r.y = cy;
    cx += r.w;
    shelf_h = std::max(shelf_h, r.h);
  }
  return true;
}

inline std::vector<Rect> chart_rects(const std::vector<Quad>& quads, double density, int gutter) {
  std::vector<Rect> rects;
  rects.reserve(quads.size());
  for (const auto& q : quads) {
    const double eu = length(q.corners[1] - q.corners[0]);
    const double ev = length(q.corners[3] - q.corners[0]);
    const int w = std::max(1, static_cast<int>(std::ceil(eu * density)));
    const int h = std::max(1, static_cast<int>(std::ceil(ev * density)));
    rects.push_back({w + 2 * gutter, h + 2 * gutter});
  }
  return rects;
}

inline double to_float(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace detail

inline Scene build_box_room(const RoomSpec& spec) {
  if (!(spec.size.x > 0 && spec.size.y > 0 && spec.size.z > 0)) throw Error("build_box_room: room dimensions must be positive");
  if (spec.atlas_resolution <= 0) throw Error("build_box_room: atlas resolution must be positive");

  std::vector<detail::Quad> quads;
  const Aabb room{{0, 0, 0}, spec.size};
  detail::add_box_quads(room, true, spec.shell_instances, quads);
  for (const auto& f : spec.furniture) {
    if (!f.box.valid()) throw Error("build_box_room: furniture box has non-positive extent");
    std::array<int, 6> ids;
    ids.fill(f.instance);
    detail::add_box_quads(f.box, false, ids, quads);
  }

  std::set<int> used;
  for (const auto& q : quads) used.insert(q.instance);
  const int n = used.empty() ? 0 : *used.rbegin() + 1;
  if (*used.begin() != 0 || static_cast<int>(used.size()) != n)
    throw Error("build_box_room: instance ids must be contiguous from 0");

  const int side = spec.atlas_resolution;
  double density = spec.texels_per_unit;
  std::vector<detail::Rect> rects;
  if (density > 0) {
    rects = detail::chart_rects(quads, density, spec.gutter);
    if (!detail::shelf_pack(rects, side)) {
      int need = side;
      do {
        need += std::max(1, need / 16);
        rects = detail::chart_rects(quads, density, spec.gutter);
      } while (!detail::shelf_pack(rects, need));
      throw Error(str_cat("build_box_room: atlas overflow; ", quads.size(), " charts at ", density,
                          " texels/unit need an atlas of at least ", need, " texels per side (have ", side, ")"));
    }
  } else {
    double lo = 0, hi = side;
    if (!detail::shelf_pack(rects = detail::chart_rects(quads, 1e-9, spec.gutter), side))
      throw Error(str_cat("build_box_room: atlas overflow; ", quads.size(), " charts with gutter ", spec.gutter,
                          " need more than ", side, " texels per side"));
    for (int it = 0; it < 60; ++it) {
      const double mid = 0.5 * (lo + hi);
      auto trial = detail::chart_rects(quads, mid, spec.gutter);
      if (detail::shelf_pack(trial, side)) lo = mid;
      else hi = mid;
    }
    density = lo;
    rects = detail::chart_rects(quads, density, spec.gutter);
    detail::shelf_pack(rects, side);
  }

  Scene scene;
  scene.instance_count = n;
  scene.bounds = room;
  Mesh& m = scene.mesh;
  const double inv = 1.0 / side;
  for (std::size_t qi = 0; qi < quads.size(); ++qi) {
    const auto& q = quads[qi];
    const auto& r = rects[qi];
    const int base_p = static_cast<int>(m.positions.size());
    const int base_t = static_cast<int>(m.uv_coords.size());
    for (const auto& c : q.corners) m.positions.push_back({detail::to_float(c.x), detail::to_float(c.y), detail::to_float(c.z)});
    const double u0 = (r.x + spec.gutter) * inv, v0 = (r.y + spec.gutter) * inv;
    const double u1 = (r.x + r.w - spec.gutter) * inv, v1 = (r.y + r.h - spec.gutter) * inv;
    const std::array<Vec2, 4> uvs = {{{u0, v0}, {u1, v0}, {u1, v1}, {u0, v1}}};
    for (const auto& uv : uvs) m.uv_coords.push_back({detail::to_float(uv.x), detail::to_float(uv.y)});
    m.triangles.push_back({{base_p, base_p + 1, base_p + 2}, {base_t, base_t + 1, base_t + 2}});
    m.triangles.push_back({{base_p, base_p + 2, base_p + 3}, {base_t, base_t + 2, base_t + 3}});
    m.face_instance.push_back(q.instance);
    m.face_instance.push_back(q.instance);
  }
  scene.references.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    scene.references[static_cast<std::size_t>(i)] =
        i < static_cast<int>(spec.references.size()) ? spec.references[static_cast<std::size_t>(i)] : str_cat("ref_", i, ".png");
  }
  return scene;
}

// Two-instance box room used by examples, tests and the CLI default.
inline RoomSpec toy_room_spec() {
  RoomSpec spec;
  spec.size = {4, 3, 4};
  spec.shell_instances = {0, 0, 0, 0, 0, 0};
  spec.furniture.push_back({{{1.4, 0.0, 1.4}, {2.6, 1.2, 2.6}}, 1});
  spec.references = {"ref_0.png", "ref_1.png"};
  spec.atlas_resolution = 1024;
  return spec;
}

// ---------------------------------------------------------------------------
// Validation

namespace detail {

// Texel multiplicity of the UV layout; centers on triangle edges are skipped.
inline std::vector<std::string> uv_overlap_diagnostics(const Mesh& m, int res) {
  std::vector<int> owner(static_cast<std::size_t>(res) * res, -1);
  std::vector<std::string> out;
  std::set<std::pair<int, int>> reported;
  for (std::size_t f = 0; f < m.triangles.size(); ++f) {
    const auto& t = m.triangles[f];
    Vec2 a = m.uv_coords[t.uv[0]], b = m.uv_coords[t.uv[1]], c = m.uv_coords[t.uv[2]];
    const double area = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
    if (std::abs(area) < 1e-15) continue;
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min({a.x, b.x, c.x}) * res)));
    const int x1 = std::min(res - 1, static_cast<int>(std::ceil(std::max({a.x, b.x, c.x}) * res)));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min({a.y, b.y, c.y}) * res)));
    const int y1 = std::min(res - 1, static_cast<int>(std::ceil(std::max({a.y, b.y, c.y}) * res)));
    const double eps = 1e-9;
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double px = (x + 0.5) / res, py = (y + 0.5) / res;
        const double w0 = ((b.x - px) * (c.y - py) - (b.y - py) * (c.x - px)) / area;
        const double w1 = ((c.x - px) * (a.y - py) - (c.y - py) * (a.x - px)) / area;
        const double w2 = 1.0 - w0 - w1;
        if (w0 <= eps || w1 <= eps || w2 <= eps) continue;
        int& o = owner[static_cast<std::size_t>(y) * res + x];
        if (o >= 0) {
          if (reported.insert({o, static_cast<int>(f)}).second)
            out.push_back(str_cat("uv overlap between triangle ", o, " and triangle ", f));
        } else {
          o = static_cast<int>(f);
        }
      }
    }
  }
  return out;
}

}  // namespace detail

// Empty iff every Scene/Mesh invariant holds.
inline std::vector<std::string> validate_scene(const Scene& s, int overlap_resolution = 512) {
  std::vector<std::string> d;
  const Mesh& m = s.mesh;
  const int np = static_cast<int>(m.positions.size());
  const int nt = static_cast<int>(m.uv_coords.size());
  bool indices_ok = true;
  for (std::size_t f = 0; f < m.triangles.size(); ++f) {
    for (int k = 0; k < 3; ++k) {
      if (m.triangles[f].p[k] < 0 || m.triangles[f].p[k] >= np) {
        d.push_back(str_cat("triangle ", f, ": position index ", m.triangles[f].p[k], " out of range"));
        indices_ok = false;
      }
      if (m.triangles[f].uv[k] < 0 || m.triangles[f].uv[k] >= nt) {
        d.push_back(str_cat("triangle ", f, ": uv index ", m.triangles[f].uv[k], " out of range"));
        indices_ok = false;
      }
    }
  }
  bool uv_ok = true;
  for (int i = 0; i < nt; ++i) {
    const Vec2& uv = m.uv_coords[static_cast<std::size_t>(i)];
    if (!(uv.x >= 0 && uv.x <= 1 && uv.y >= 0 && uv.y <= 1)) {
      d.push_back(str_cat("uv vertex ", i, ": coordinate (", uv.x, ", ", uv.y, ") outside [0,1]^2"));
      uv_ok = false;
    }
  }
  if (m.face_instance.size() != m.triangles.size()) {
    d.push_back(str_cat("face_instance has ", m.face_instance.size(), " entries for ", m.triangles.size(), " triangles"));
  }
  std::set<int> used;
  for (std::size_t f = 0; f < m.face_instance.size(); ++f) {
    const int id = m.face_instance[f];
    if (id < 0 || id >= s.instance_count) d.push_back(str_cat("triangle ", f, ": instance id ", id, " out of range"));
    else used.insert(id);
  }
  for (int i = 0; i < s.instance_count; ++i) {
    if (!used.count(i)) d.push_back(str_cat("unused instance id ", i));
  }
  if (static_cast<int>(s.references.size()) != s.instance_count) {
    d.push_back(str_cat("reference assignment covers ", s.references.size(), " of ", s.instance_count, " instances"));
  } else {
    for (int i = 0; i < s.instance_count; ++i)
      if (s.references[static_cast<std::size_t>(i)].empty()) d.push_back(str_cat("instance ", i, ": empty reference"));
  }
  if (!s.bounds.valid()) d.push_back("bounds: empty box");
  if (indices_ok && uv_ok && overlap_resolution > 0) {
    auto o = detail::uv_overlap_diagnostics(m, overlap_resolution);
    d.insert(d.end(), o.begin(), o.end());
  }
  return d;
}

// ---------------------------------------------------------------------------
// Scene file (WEAVE-SCENE v1)

namespace detail {

inline std::string fmt9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace detail

inline void write_scene(const Scene& s, std::ostream& os) {
  using detail::fmt9;
  const Mesh& m = s.mesh;
  os << "WEAVE-SCENE v1\n";
  os << "instance_count " << s.instance_count << "\n";
  os << "positions " << m.positions.size() << "\n";
  for (const auto& p : m.positions) os << fmt9(p.x) << ' ' << fmt9(p.y) << ' ' << fmt9(p.z) << "\n";
  os << "uvs " << m.uv_coords.size() << "\n";
  for (const auto& t : m.uv_coords) os << fmt9(t.x) << ' ' << fmt9(t.y) << "\n";
  os << "triangles " << m.triangles.size() << "\n";
  for (const auto& t : m.triangles)
    os << t.p[0] << ' ' << t.p[1] << ' ' << t.p[2] << ' ' << t.uv[0] << ' ' << t.uv[1] << ' ' << t.uv[2] << "\n";
  os << "face_instance " << m.face_instance.size() << "\n";
  for (int i : m.face_instance) os << i << "\n";
  os << "references " << s.references.size() << "\n";
  for (std::size_t i = 0; i < s.references.size(); ++i) os << i << ' ' << s.references[i] << "\n";
  os << "bounds\n";
  os << fmt9(s.bounds.lo.x) << ' ' << fmt9(s.bounds.lo.y) << ' ' << fmt9(s.bounds.lo.z) << ' ' << fmt9(s.bounds.hi.x)
     << ' ' << fmt9(s.bounds.hi.y) << ' ' << fmt9(s.bounds.hi.z) << "\n";
  os << "end\n";
}

inline void save_scene(const Scene& s, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error(str_cat("save_scene: cannot open ", path));
  write_scene(s, os);
  if (!os) throw Error(str_cat("save_scene: write failed for ", path));
}

namespace detail {

class LineReader {
 public:
  explicit LineReader(std::istream& is) : is_(is) {}

  std::string next(const char* expecting) {
    std::string line;
    while (std::getline(is_, line)) {
      ++line_no_;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) return line;
    }
    throw ParseError(line_no_ + 1, str_cat("unexpected end of file, expected ", expecting));
  }
  int line() const { return line_no_; }

  template <typename... Out>
  void parse(const std::string& line, const char* what, Out&... out) {
    std::istringstream iss(line);
    (iss >> ... >> out);
    std::string rest;
    if (iss.fail() || (iss >> rest)) throw ParseError(line_no_, str_cat("malformed ", what, ": '", line, "'"));
  }

  std::size_t header(const std::string& name) {
    const std::string line = next(name.c_str());
    std::istringstream iss(line);
    std::string key;
    long long n = -1;
    iss >> key;
    if (key != name) throw ParseError(line_no_, str_cat("expected section '", name, "', found '", key, "'"));
    iss >> n;
    std::string rest;
    if (iss.fail() || n < 0 || (iss >> rest)) throw ParseError(line_no_, str_cat("malformed section header: '", line, "'"));
    return static_cast<std::size_t>(n);
  }

 private:
  std::istream& is_;
  int line_no_ = 0;
};

}  // namespace detail

inline Scene read_scene(std::istream& is) {
  detail::LineReader r(is);
  const std::string head = r.next("header");
  if (head.rfind("WEAVE-SCENE", 0) != 0) throw ParseError(r.line(), "missing WEAVE-SCENE header");
  if (head != "WEAVE-SCENE v1") throw VersionError(str_cat("scene file version mismatch: '", head, "' (supported: v1)"));

  Scene s;
  Mesh& m = s.mesh;
  const std::string ic = r.next("instance_count");
  {
    std::string key;
    std::istringstream iss(ic);
    iss >> key;
    if (key != "instance_count") throw ParseError(r.line(), "expected instance_count");
    r.parse(ic.substr(key.size()), "instance_count", s.instance_count);
  }
  using detail::to_float;
  m.positions.resize(r.header("positions"));
  for (auto& p : m.positions) {
    r.parse(r.next("position"), "position", p.x, p.y, p.z);
    p = {to_float(p.x), to_float(p.y), to_float(p.z)};
  }
  m.uv_coords.resize(r.header("uvs"));
  for (auto& t : m.uv_coords) {
    r.parse(r.next("uv"), "uv", t.x, t.y);
    t = {to_float(t.x), to_float(t.y)};
  }
  m.triangles.resize(r.header("triangles"));
  for (auto& t : m.triangles) r.parse(r.next("triangle"), "triangle", t.p[0], t.p[1], t.p[2], t.uv[0], t.uv[1], t.uv[2]);
  m.face_instance.resize(r.header("face_instance"));
  for (auto& i : m.face_instance) r.parse(r.next("face instance"), "face instance", i);
  s.references.resize(r.header("references"));
  for (std::size_t i = 0; i < s.references.size(); ++i) {
    const std::string line = r.next("reference");
    std::istringstream iss(line);
    std::size_t id = 0;
    iss >> id;
    std::string name;
    std::getline(iss >> std::ws, name);
    if (iss.bad() || id != i || name.empty()) throw ParseError(r.line(), str_cat("malformed reference: '", line, "'"));
    s.references[i] = name;
  }
  if (r.next("bounds") != "bounds") throw ParseError(r.line(), "expected section 'bounds'");
  Aabb& b = s.bounds;
  r.parse(r.next("bounds values"), "bounds", b.lo.x, b.lo.y, b.lo.z, b.hi.x, b.hi.y, b.hi.z);
  b = {{to_float(b.lo.x), to_float(b.lo.y), to_float(b.lo.z)}, {to_float(b.hi.x), to_float(b.hi.y), to_float(b.hi.z)}};
  const std::string tail = r.next("end");
  if (tail != "end") {
    std::istringstream iss(tail);
    std::string section;
    iss >> section;
    throw ParseError(r.line(), str_cat("unknown section '", section, "'"));
  }
  std::string extra;
  while (std::getline(is, extra)) {
    if (extra.find_first_not_of(" \t\r") != std::string::npos) {
      std::istringstream iss(extra);
      std::string section;
      iss >> section;
      throw ParseError(r.line() + 1, str_cat("unknown trailing section '", section, "'"));
    }
  }
  return s;
}

inline Scene load_scene(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(str_cat("load_scene: cannot open ", path));
  return read_scene(is);
}

}  // namespace weave
