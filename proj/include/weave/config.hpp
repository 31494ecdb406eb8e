// Copyright 2026 The Weave Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "weave/eval.hpp"
#include "weave/pretrain.hpp"
#include "weave/texture_field.hpp"

namespace weave {

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Everything a run needs; echoed in full into its run directory.
struct RunConfig {
  std::uint64_t seed = 0;
  DistillConfig distill;
  HashGridConfig grid;
  DatasetConfig dataset;
  PretrainConfig teacher_pretrain;
  PretrainConfig sr_pretrain{1500};
  std::string scene = "scene.txt";
  std::vector<std::string> references;  // empty: taken from the scene file, relative to it
  std::string teacher = "models/teacher.wmdl";
  std::string sr = "models/sr.wmdl";
  std::string checkpoint;  // optimize run directory or checkpoint bundle
  int eval_views = 16;
  int bake_resolution = 1024;
  int bake_tile = 256;
  std::vector<int> bench_resolutions{1024, 2048, 4096};
  int bench_repeats = 3;
  std::vector<std::string> variants{"full", "post-sr", "no-sr-loss", "no-f-mask", "no-multi-ref"};
  double post_sr_t = 0.5;
  int post_sr_steps = 4;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <typename V>
V parse_number(const std::string& key, const std::string& s) {
  V v{};
  const char* b = s.data();
  const char* e = s.data() + s.size();
  if constexpr (std::is_floating_point_v<V>) {
    try {
      std::size_t pos = 0;
      v = static_cast<V>(std::stod(s, &pos));
      if (pos != s.size()) throw ConfigError("");
    } catch (...) {
      throw ConfigError(str_cat("config: key '", key, "' expects a number, got '", s, "'"));
    }
  } else {
    const auto r = std::from_chars(b, e, v);
    if (r.ec != std::errc() || r.ptr != e) throw ConfigError(str_cat("config: key '", key, "' expects an integer, got '", s, "'"));
  }
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError(str_cat("config: key '", key, "' expects true or false, got '", s, "'"));
}

struct Binding {
  std::string key;  // section.name
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename V>
std::string format_value(V v) {
  if constexpr (std::is_floating_point_v<V>) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", static_cast<double>(v));
    return buf;
  } else {
    return str_cat(v);
  }
}

template <typename V>
Binding num(std::string key, V RunConfig::*field) {
  return {key, [field](const RunConfig& c) { return format_value(c.*field); },
          [key, field](RunConfig& c, const std::string& s) { c.*field = parse_number<V>(key, s); }};
}

template <typename S, typename V>
Binding num(std::string key, S RunConfig::*sub, V S::*field) {
  return {key, [sub, field](const RunConfig& c) { return format_value(c.*sub.*field); },
          [key, sub, field](RunConfig& c, const std::string& s) { c.*sub.*field = parse_number<V>(key, s); }};
}

template <typename S>
Binding flag(std::string key, S RunConfig::*sub, bool S::*field) {
  return {key, [sub, field](const RunConfig& c) { return std::string(c.*sub.*field ? "true" : "false"); },
          [key, sub, field](RunConfig& c, const std::string& s) { c.*sub.*field = parse_bool(key, s); }};
}

inline Binding text(std::string key, std::string RunConfig::*field) {
  return {key, [field](const RunConfig& c) { return c.*field; }, [field](RunConfig& c, const std::string& s) { c.*field = s; }};
}

inline std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + v[i];
  return s;
}

inline const std::vector<Binding>& bindings() {
  static const std::vector<Binding> b = [] {
    std::vector<Binding> v;
    v.push_back(num("run.seed", &RunConfig::seed));
    v.push_back(text("paths.scene", &RunConfig::scene));
    v.push_back({"paths.references", [](const RunConfig& c) { return join(c.references); },
                 [](RunConfig& c, const std::string& s) { c.references = split_list(s); }});
    v.push_back(text("paths.teacher", &RunConfig::teacher));
    v.push_back(text("paths.sr", &RunConfig::sr));
    v.push_back(text("paths.checkpoint", &RunConfig::checkpoint));

    using D = DistillConfig;
    v.push_back(num("distill.iterations", &RunConfig::distill, &D::iterations));
    v.push_back(num("distill.lr_texture", &RunConfig::distill, &D::lr_texture));
    v.push_back(num("distill.lr_adapter", &RunConfig::distill, &D::lr_adapter));
    v.push_back(num("distill.t_min", &RunConfig::distill, &D::t_min));
    v.push_back(num("distill.t_max", &RunConfig::distill, &D::t_max));
    v.push_back(num("distill.t_final", &RunConfig::distill, &D::t_final));
    v.push_back(num("distill.anneal_start", &RunConfig::distill, &D::anneal_start));
    v.push_back(num("distill.anneal_end", &RunConfig::distill, &D::anneal_end));
    v.push_back(num("distill.lambda_sr", &RunConfig::distill, &D::lambda_sr));
    v.push_back(num("distill.sr_start", &RunConfig::distill, &D::sr_start));
    v.push_back(num("distill.view_count", &RunConfig::distill, &D::view_count));
    v.push_back(num("distill.render_size", &RunConfig::distill, &D::render_size));
    v.push_back(num("distill.adapter_steps", &RunConfig::distill, &D::adapter_steps));
    v.push_back(num("distill.lora_rank", &RunConfig::distill, &D::lora_rank));
    v.push_back({"distill.weighting", [](const RunConfig& c) { return to_string(c.distill.weighting); },
                 [](RunConfig& c, const std::string& s) {
                   try {
                     c.distill.weighting = parse_weighting(s);
                   } catch (const Error& e) {
                     throw ConfigError(str_cat("config: distill.weighting: ", e.what()));
                   }
                 }});
    v.push_back(flag("distill.feature_masks", &RunConfig::distill, &D::feature_masks));
    v.push_back(flag("distill.multi_ref", &RunConfig::distill, &D::multi_ref));
    v.push_back(flag("distill.use_sr", &RunConfig::distill, &D::use_sr));
    v.push_back(num("distill.checkpoint_every", &RunConfig::distill, &D::checkpoint_every));
    v.push_back(num("distill.log_every", &RunConfig::distill, &D::log_every));

    using G = HashGridConfig;
    v.push_back(num("grid.levels", &RunConfig::grid, &G::levels));
    v.push_back(num("grid.base_resolution", &RunConfig::grid, &G::base_resolution));
    v.push_back(num("grid.growth_factor", &RunConfig::grid, &G::growth_factor));
    v.push_back(num("grid.table_log2", &RunConfig::grid, &G::table_log2));
    v.push_back(num("grid.features_per_level", &RunConfig::grid, &G::features_per_level));
    v.push_back(num("grid.hidden_width", &RunConfig::grid, &G::hidden_width));

    using S = DatasetConfig;
    v.push_back(num("dataset.scenes", &RunConfig::dataset, &S::scenes));
    v.push_back(num("dataset.views_per_scene", &RunConfig::dataset, &S::views_per_scene));
    v.push_back(num("dataset.render_size", &RunConfig::dataset, &S::render_size));
    v.push_back(num("dataset.sr_blur_sigma", &RunConfig::dataset, &S::sr_blur_sigma));
    v.push_back({"dataset.patterns",
                 [](const RunConfig& c) {
                   std::vector<std::string> k;
                   if (c.dataset.kinds.flat) k.push_back("flat");
                   if (c.dataset.kinds.stripes) k.push_back("stripes");
                   if (c.dataset.kinds.checker) k.push_back("checker");
                   return join(k);
                 },
                 [](RunConfig& c, const std::string& s) {
                   c.dataset.kinds = {false, false, false};
                   for (const auto& k : split_list(s)) {
                     if (k == "flat") c.dataset.kinds.flat = true;
                     else if (k == "stripes") c.dataset.kinds.stripes = true;
                     else if (k == "checker") c.dataset.kinds.checker = true;
                     else throw ConfigError(str_cat("config: dataset.patterns: unknown pattern '", k, "'"));
                   }
                 }});

    using P = PretrainConfig;
    for (const auto& [name, field] : {std::pair{std::string("teacher"), &RunConfig::teacher_pretrain}, std::pair{std::string("sr"), &RunConfig::sr_pretrain}}) {
      const std::string sec = "pretrain_" + name + ".";
      v.push_back(num(sec + "steps", field, &P::steps));
      v.push_back(num(sec + "lr", field, &P::lr));
      v.push_back(num(sec + "clip_norm", field, &P::clip_norm));
      v.push_back(num(sec + "final_lr_fraction", field, &P::final_lr_fraction));
      v.push_back(num(sec + "heldout", field, &P::heldout));
      v.push_back(num(sec + "log_every", field, &P::log_every));
    }

    v.push_back(num("eval.views", &RunConfig::eval_views));
    v.push_back(num("bake.resolution", &RunConfig::bake_resolution));
    v.push_back(num("bake.tile", &RunConfig::bake_tile));
    v.push_back({"bench.resolutions",
                 [](const RunConfig& c) {
                   std::vector<std::string> s;
                   for (int r : c.bench_resolutions) s.push_back(str_cat(r));
                   return join(s);
                 },
                 [](RunConfig& c, const std::string& s) {
                   c.bench_resolutions.clear();
                   for (const auto& k : split_list(s)) c.bench_resolutions.push_back(parse_number<int>("bench.resolutions", k));
                 }});
    v.push_back(num("bench.repeats", &RunConfig::bench_repeats));
    v.push_back({"ablate.variants", [](const RunConfig& c) { return join(c.variants); },
                 [](RunConfig& c, const std::string& s) {
                   c.variants = split_list(s);
                   for (const auto& x : c.variants) {
                     try {
                       parse_variant(x);
                     } catch (const Error& e) {
                       throw ConfigError(str_cat("config: ablate.variants: ", e.what()));
                     }
                   }
                 }});
    v.push_back(num("ablate.post_sr_t", &RunConfig::post_sr_t));
    v.push_back(num("ablate.post_sr_steps", &RunConfig::post_sr_steps));
    return v;
  }();
  return b;
}

}  // namespace detail

// Sets section.key; unknown keys are schema violations.
inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  for (const auto& b : detail::bindings())
    if (b.key == key) {
      b.set(c, value);
      if (key == "run.seed") c.distill.seed = c.seed;
      return;
    }
  throw ConfigError(str_cat("config: unknown key '", key, "'"));
}

// "key = value" lines under "[section]" headers; '#' starts a comment.
inline void apply_config_text(RunConfig& c, std::istream& is, const std::string& origin = "config") {
  std::string line, section;
  int n = 0;
  while (std::getline(is, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(str_cat(origin, ":", n, ": malformed section header"));
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(str_cat(origin, ":", n, ": expected 'key = value'"));
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string full = section.empty() ? key : section + "." + key;
    try {
      set_config_value(c, full, detail::trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(str_cat(origin, ":", n, ": ", e.what()));
    }
  }
}

inline void load_config_file(RunConfig& c, const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError(str_cat("config: cannot open ", path));
  apply_config_text(c, is, path);
}

inline void write_config(const RunConfig& c, std::ostream& os) {
  std::string section;
  for (const auto& b : detail::bindings()) {
    const auto dot = b.key.find('.');
    const std::string sec = b.key.substr(0, dot);
    if (sec != section) {
      os << (section.empty() ? "" : "\n") << "[" << sec << "]\n";
      section = sec;
    }
    os << b.key.substr(dot + 1) << " = " << b.get(c) << "\n";
  }
}

inline std::string config_string(const RunConfig& c) {
  std::ostringstream os;
  write_config(c, os);
  return os.str();
}

}  // namespace weave
