// Copyright 2026 The Weave Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line driver: make-scene, pretrain, optimize, bake, render, eval,
// bench, ablate.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "weave/config.hpp"
#include "weave/eval.hpp"

namespace fs = std::filesystem;
using namespace weave;

namespace {

constexpr const char* kVersion = "0.1.0";

class PathError : public Error {
 public:
  using Error::Error;
};

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool resume = false;
  bool quiet = false;
  std::vector<std::string> overrides;  // section.key=value
};

struct Context {
  Globals g;
  RunConfig cfg;
  fs::path out;
  std::vector<std::pair<std::string, std::string>> inputs;  // role, path
  std::vector<std::string> outputs;

  void log(const std::string& s) const {
    if (!g.quiet) std::cerr << s << "\n";
  }
  void input(const std::string& role, const std::string& path) { inputs.emplace_back(role, path); }
  std::string output(const std::string& name) {
    outputs.push_back(name);
    return (out / name).string();
  }
};

std::string fnv_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) return "missing";
  std::uint64_t h = 1469598103934665603ull;
  char buf[1 << 16];
  while (is) {
    is.read(buf, sizeof buf);
    for (std::streamsize i = 0; i < is.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
  }
  char s[17];
  std::snprintf(s, sizeof s, "%016llx", static_cast<unsigned long long>(h));
  return s;
}

std::string hash_path(const std::string& p) {
  if (!fs::is_directory(p)) return fnv_file(p);
  std::string all;
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(p))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) all += f.lexically_relative(p).string() + ":" + fnv_file(f.string()) + ";";
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : all) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char s[17];
  std::snprintf(s, sizeof s, "%016llx", static_cast<unsigned long long>(h));
  return s;
}

void write_manifest(const Context& c, const std::string& command) {
  std::ofstream os(c.out / "manifest.txt");
  os << "command = " << command << "\nversion = " << kVersion << "\nseed = " << c.cfg.seed << "\n";
  for (const auto& [role, path] : c.inputs) os << "input." << role << " = " << path << " " << hash_path(path) << "\n";
  for (const auto& o : c.outputs) os << "output = " << o << "\n";
}

void echo_config(Context& c) {
  std::ofstream os(c.output("config.ini"));
  write_config(c.cfg, os);
}

std::string timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", std::gmtime(&t));
  return buf;
}

fs::path run_directory(const Globals& g, const std::string& command) {
  if (!g.out.empty()) return g.out;
  fs::path base = fs::path("runs") / (command + "-" + timestamp());
  fs::path p = base;
  for (int k = 1; fs::exists(p); ++k) p = base.string() + "-" + std::to_string(k);
  return p;
}

Context make_context(const Globals& g, const std::string& command) {
  Context c;
  c.g = g;
  if (!g.config_path.empty()) {
    if (!fs::exists(g.config_path)) throw PathError(str_cat("config file not found: ", g.config_path));
    load_config_file(c.cfg, g.config_path);
    c.input("config", g.config_path);
  }
  for (const auto& o : g.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError(str_cat("--set expects key=value, got '", o, "'"));
    set_config_value(c.cfg, detail::trim(o.substr(0, eq)), detail::trim(o.substr(eq + 1)));
  }
  if (g.seed) set_config_value(c.cfg, "run.seed", std::to_string(*g.seed));
  c.out = run_directory(g, command);
  fs::create_directories(c.out);
  return c;
}

void require_file(const std::string& p, const std::string& what) {
  if (!fs::exists(p)) throw PathError(str_cat(what, " not found: ", p));
}

// ---------------------------------------------------------------------------
// Loading helpers

struct LoadedScene {
  Scene scene;
  std::vector<Tensor<float>> references;
};

LoadedScene load_scene_and_refs(Context& c) {
  require_file(c.cfg.scene, "scene file");
  c.input("scene", c.cfg.scene);
  LoadedScene s{load_scene(c.cfg.scene), {}};
  const auto diags = validate_scene(s.scene);
  if (!diags.empty()) throw Error(str_cat("scene is invalid: ", diags.front()));
  std::vector<std::string> paths = c.cfg.references;
  if (paths.empty())
    for (const auto& r : s.scene.references) paths.push_back((fs::path(c.cfg.scene).parent_path() / r).string());
  if (static_cast<int>(paths.size()) != s.scene.instance_count)
    throw ConfigError(str_cat(paths.size(), " reference images for ", s.scene.instance_count, " instances"));
  for (std::size_t i = 0; i < paths.size(); ++i) {
    require_file(paths[i], "reference image");
    c.input(str_cat("reference", i), paths[i]);
    s.references.push_back(load_png(paths[i]));
  }
  return s;
}

std::shared_ptr<const UNetWeights<float>> load_model(Context& c, const std::string& path, const std::string& role) {
  require_file(path, role + " checkpoint");
  c.input(role, path);
  return std::make_shared<const UNetWeights<float>>(load_unet<float>(path));
}

fs::path bundle_dir(const std::string& p) {
  if (p.empty()) throw ConfigError("no checkpoint given (use --checkpoint or paths.checkpoint)");
  if (fs::exists(fs::path(p) / "field.wtfx")) return p;
  if (fs::exists(fs::path(p) / "checkpoint" / "field.wtfx")) return fs::path(p) / "checkpoint";
  throw PathError(str_cat("no field checkpoint under ", p));
}

TextureField<float> load_checkpoint_field(Context& c) {
  const fs::path b = bundle_dir(c.cfg.checkpoint);
  c.input("field", (b / "field.wtfx").string());
  return load_field<float>((b / "field.wtfx").string());
}

std::vector<Camera> command_cameras(const Scene& scene, const RunConfig& cfg, int n, int size) {
  DistillConfig d = cfg.distill;
  d.render_size = size;
  return eval_cameras(scene, d, n);
}

// ---------------------------------------------------------------------------
// Room spec files for make-scene: "size = x y z", "shell = 6 ids",
// "box = x0 y0 z0 x1 y1 z1 instance" (repeatable), "atlas_resolution = n",
// "references = a.png b.png".

RoomSpec read_room_spec(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw PathError(str_cat("room spec not found: ", path));
  RoomSpec spec;
  spec.furniture.clear();
  std::string line;
  int n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (const auto h = line.find('#'); h != std::string::npos) line = line.substr(0, h);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(str_cat(path, ":", n, ": expected 'key = value'"));
    const std::string key = detail::trim(line.substr(0, eq));
    std::istringstream vs(line.substr(eq + 1));
    auto fail = [&] { throw ConfigError(str_cat(path, ":", n, ": malformed value for '", key, "'")); };
    if (key == "size") {
      if (!(vs >> spec.size.x >> spec.size.y >> spec.size.z)) fail();
    } else if (key == "shell") {
      for (int& id : spec.shell_instances)
        if (!(vs >> id)) fail();
    } else if (key == "box") {
      BoxFurniture f;
      if (!(vs >> f.box.lo.x >> f.box.lo.y >> f.box.lo.z >> f.box.hi.x >> f.box.hi.y >> f.box.hi.z >> f.instance)) fail();
      spec.furniture.push_back(f);
    } else if (key == "atlas_resolution") {
      if (!(vs >> spec.atlas_resolution)) fail();
    } else if (key == "references") {
      spec.references.clear();
      std::string r;
      while (vs >> r) spec.references.push_back(r);
    } else {
      throw ConfigError(str_cat(path, ":", n, ": unknown room spec key '", key, "'"));
    }
  }
  return spec;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_make_scene(const Globals& g, const std::string& spec_path, bool write_refs) {
  Context c = make_context(g, "make-scene");
  RoomSpec spec = toy_room_spec();
  if (!spec_path.empty()) {
    spec = read_room_spec(spec_path);
    c.input("spec", spec_path);
  }
  const Scene scene = build_box_room(spec);
  const auto diags = validate_scene(scene);
  if (!diags.empty()) throw Error(str_cat("generated scene is invalid: ", diags.front()));
  save_scene(scene, c.output("scene.txt"));
  if (write_refs) {
    // Flat red and blue for the first two instances, seeded colours after.
    Rng rng(derive_seed(c.cfg.seed, 0x72656673ull));
    for (int i = 0; i < scene.instance_count; ++i) {
      const Vec3 col = i == 0 ? Vec3{0.9, 0.1, 0.1} : i == 1 ? Vec3{0.1, 0.1, 0.9} : Vec3{rng.uniform(), rng.uniform(), rng.uniform()};
      save_png(c.output(scene.references[static_cast<std::size_t>(i)]), pattern_image(flat_pattern(col), 64));
    }
  }
  echo_config(c);
  write_manifest(c, "make-scene");
  c.log(str_cat("scene with ", scene.mesh.triangles.size(), " triangles and ", scene.instance_count, " instances written to ", c.out.string()));
  return 0;
}

int cmd_pretrain(const Globals& g, int dump) {
  Context c = make_context(g, "pretrain");
  const ProceduralDataset data(c.cfg.dataset, derive_seed(c.cfg.seed, 0x64617461ull));
  if (dump > 0) {
    const char* cache = std::getenv("WEAVE_CACHE_DIR");
    const fs::path dir = cache ? fs::path(cache) / str_cat("dataset-", c.cfg.seed) : c.out / "dataset";
    Rng rng(derive_seed(c.cfg.seed, 0x64756d70ull));
    std::vector<DenoiseSample<float>> samples;
    for (int i = 0; i < dump; ++i) samples.push_back(data.teacher_sample<float>(rng));
    write_dataset(dir.string(), samples);
    c.log(str_cat("dataset sample written to ", dir.string()));
  }
  std::ofstream report(c.output("pretrain.csv"));
  report << "model,step,train_loss\n";
  auto progress = [&](const std::string& model) {
    return [&, model](int step, double loss) {
      report << model << "," << step << "," << loss << "\n";
      c.log(str_cat(model, " step ", step, " loss ", loss));
    };
  };
  PretrainReport tr, sr;
  fs::create_directories(c.out / "models");
  const auto teacher = pretrain_teacher<float>(data, c.cfg.teacher_pretrain, derive_seed(c.cfg.seed, 0x74636872ull), &tr, progress("teacher"));
  save_unet(teacher, c.output("models/teacher.wmdl"));
  const auto srw = pretrain_sr<float>(data, c.cfg.sr_pretrain, derive_seed(c.cfg.seed, 0x73726d6full), &sr, progress("sr"));
  save_unet(srw, c.output("models/sr.wmdl"));
  std::ofstream h(c.output("heldout.csv"));
  h << "model,heldout_loss,baseline_loss,shuffled_reference_loss\n";
  h << "teacher," << tr.heldout_loss << "," << tr.baseline_loss << "," << tr.heldout_loss_shuffled << "\n";
  h << "sr," << sr.heldout_loss << "," << sr.baseline_loss << ",\n";
  const bool ok = tr.heldout_loss <= 0.7 * tr.baseline_loss;
  c.log(str_cat("teacher held-out ", tr.heldout_loss, " vs baseline ", tr.baseline_loss, ok ? "" : " (less than 30% below baseline)"));
  echo_config(c);
  write_manifest(c, "pretrain");
  return 0;
}

int cmd_optimize(const Globals& g) {
  Context c = make_context(g, "optimize");
  LoadedScene s = load_scene_and_refs(c);
  const auto teacher_w = load_model(c, c.cfg.teacher, "teacher");
  std::shared_ptr<const UNetWeights<float>> sr_w;
  if (c.cfg.distill.use_sr) sr_w = load_model(c, c.cfg.sr, "sr");
  SceneParticle<float> particle = make_scene_particle<float>(s.scene, s.references, c.cfg.distill, c.cfg.grid);
  TeacherModel<float> teacher(teacher_w);
  AdapterModel<float> adapter(teacher_w, c.cfg.distill.lora_rank, derive_seed(c.cfg.seed, 0x6c6f7261ull));
  std::optional<SRModel<float>> sr;
  if (sr_w) sr.emplace(sr_w);
  Distiller<float> d(c.cfg.distill, particle, teacher, adapter, sr ? &*sr : nullptr);
  if (g.resume && !fs::exists(c.out / "checkpoint" / "state.bin")) throw PathError(str_cat("--resume: no checkpoint in ", c.out.string()));
  const auto t0 = std::chrono::steady_clock::now();
  d.run(c.out.string(), g.resume, [&](const StepRecord& r) {
    if ((r.iteration + 1) % std::max(1, c.cfg.distill.log_every * 10) == 0) {
      const double el = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::string errs;
      for (double e : r.color_errors) errs += str_cat(" ", e);
      c.log(str_cat("iteration ", r.iteration + 1, "/", c.cfg.distill.iterations, " t ", r.t, " adapter_loss ", r.adapter_loss, " color_error", errs,
                    " (", el, " s)"));
    }
  });
  c.outputs.push_back("metrics.csv");
  c.outputs.push_back("checkpoint");
  echo_config(c);
  write_manifest(c, "optimize");
  return 0;
}

int cmd_bake(const Globals& g, std::optional<int> res, std::optional<int> tile, const std::string& ck) {
  Context c = make_context(g, "bake");
  if (!ck.empty()) c.cfg.checkpoint = ck;
  if (res) c.cfg.bake_resolution = *res;
  if (tile) c.cfg.bake_tile = *tile;
  const TextureField<float> field = load_checkpoint_field(c);
  std::vector<std::uint8_t> cov;
  if (fs::exists(c.cfg.scene)) {
    c.input("scene", c.cfg.scene);
    cov = uv_coverage_mask(load_scene(c.cfg.scene).mesh, c.cfg.bake_resolution, c.cfg.bake_resolution);
  }
  const auto t0 = std::chrono::steady_clock::now();
  const Tensor<float> img = bake(field, c.cfg.bake_resolution, c.cfg.bake_resolution, c.cfg.bake_tile, cov.empty() ? nullptr : &cov);
  const double el = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  save_png(c.output("texture.png"), img);
  {
    std::size_t covered = 0;
    for (auto v : cov) covered += v != 0;
    std::ofstream os(c.output("texture.txt"));
    os << "resolution = " << c.cfg.bake_resolution << "\ntile = " << c.cfg.bake_tile << "\n";
    if (cov.empty())
      os << "validity = none\n";
    else
      os << "validity = uv coverage of " << c.cfg.scene << "\ncovered_texels = " << covered << "\n";
  }
  echo_config(c);
  write_manifest(c, "bake");
  c.log(str_cat("baked ", c.cfg.bake_resolution, "x", c.cfg.bake_resolution, " in ", el, " s"));
  return 0;
}

int cmd_render(const Globals& g, int views, std::optional<int> res, const std::string& ck) {
  Context c = make_context(g, "render");
  if (!ck.empty()) c.cfg.checkpoint = ck;
  const TextureField<float> field = load_checkpoint_field(c);
  require_file(c.cfg.scene, "scene file");
  c.input("scene", c.cfg.scene);
  const Scene scene = load_scene(c.cfg.scene);
  const auto cams = command_cameras(scene, c.cfg, views, res.value_or(c.cfg.distill.render_size));
  const auto rendered = render_views(scene, field, cams);
  for (std::size_t i = 0; i < rendered.size(); ++i) save_png(c.output(str_cat("render_", i, ".png")), rendered[i].image);
  echo_config(c);
  write_manifest(c, "render");
  return 0;
}

int cmd_eval(const Globals& g, const std::string& ck) {
  Context c = make_context(g, "eval");
  if (!ck.empty()) c.cfg.checkpoint = ck;
  const TextureField<float> field = load_checkpoint_field(c);
  LoadedScene s = load_scene_and_refs(c);
  const auto cams = command_cameras(s.scene, c.cfg, c.cfg.eval_views, c.cfg.distill.render_size);
  const EvalReport r = evaluate(s.scene, field, s.references, cams, 256);
  write_eval_csv(c.output("eval.csv"), r);
  for (std::size_t i = 0; i < r.instances.size(); ++i)
    c.log(r.instances[i].observed ? str_cat("instance ", i, " color_error ", r.instances[i].color_error) : str_cat("instance ", i, " unobserved"));
  echo_config(c);
  write_manifest(c, "eval");
  return 0;
}

int cmd_bench(const Globals& g, const std::string& ck) {
  Context c = make_context(g, "bench");
  if (!ck.empty()) c.cfg.checkpoint = ck;
  const TextureField<float> field =
      c.cfg.checkpoint.empty() ? TextureField<float>::initialized(c.cfg.grid, derive_seed(c.cfg.seed, 0x6669656cull)) : load_checkpoint_field(c);
  const BenchReport r = bench_bake(field, c.cfg.bench_resolutions, c.cfg.bench_repeats, c.cfg.bake_tile, [&](const BenchRow& row) {
    c.log(str_cat(row.resolution, "^2: ", row.median_seconds, " s (", row.per_texel_ns, " ns/texel)"));
  });
  write_bench_csv(c.output("bench.csv"), r);
  if (!r.monotone || !r.within_band) c.log(str_cat("warning: monotone=", r.monotone, " per-texel spread=", r.per_texel_spread));
  echo_config(c);
  write_manifest(c, "bench");
  return 0;
}

int cmd_ablate(const Globals& g) {
  Context c = make_context(g, "ablate");
  LoadedScene s = load_scene_and_refs(c);
  AblationSetup setup;
  setup.scene = s.scene;
  setup.references = s.references;
  setup.config = c.cfg.distill;
  setup.grid = c.cfg.grid;
  setup.teacher = load_model(c, c.cfg.teacher, "teacher");
  setup.sr = load_model(c, c.cfg.sr, "sr");
  setup.eval_views = c.cfg.eval_views;
  setup.post_sr_t = c.cfg.post_sr_t;
  setup.post_sr_steps = c.cfg.post_sr_steps;
  std::vector<Variant> variants;
  for (const auto& v : c.cfg.variants) variants.push_back(parse_variant(v));
  const auto results = run_ablations(setup, variants, c.out.string(), [&](Variant v, const StepRecord& r) {
    if ((r.iteration + 1) % 500 == 0) c.log(str_cat(to_string(v), " iteration ", r.iteration + 1));
  });
  for (const auto& r : results)
    c.log(str_cat(to_string(r.variant), ": color_error ", mean_color_error(r.report), " render_sharpness ", r.report.render_sharpness,
                  " bake_sharpness ", r.report.bake_sharpness));
  c.outputs.push_back("ablation.csv");
  echo_config(c);
  write_manifest(c, "ablate");
  return 0;
}

std::string json_escape(const std::string& s) {
  std::string o;
  for (char ch : s) {
    if (ch == '"' || ch == '\\') o += '\\';
    if (ch == '\n') {
      o += "\\n";
      continue;
    }
    o += ch;
  }
  return o;
}

int fail(const std::string& kind, const std::string& msg, int code) {
  std::cerr << "weave-error kind=" << kind << " message=\"" << json_escape(msg) << "\"\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Instance-controlled dual-distillation texture synthesis"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config_path, "Run configuration file");
  auto* seed_opt = app.add_option("--seed", seed, "Seed (overrides run.seed)");
  app.add_option("--out", g.out, "Run directory (default: runs/<command>-<timestamp>)");
  app.add_flag("--resume", g.resume, "Resume from the run directory's checkpoint");
  app.add_flag("--quiet", g.quiet, "Suppress progress output");
  app.add_option("--set", g.overrides, "Override a config key, section.key=value");

  std::string spec_path, ck;
  bool write_refs = false;
  int dump = 0, views = 4;
  std::optional<int> res, tile;
  auto* make_scene = app.add_subcommand("make-scene", "Build a box-room scene file");
  make_scene->add_option("--spec", spec_path, "Room spec file (default: the toy room)");
  make_scene->add_flag("--write-references", write_refs, "Also write flat-colour reference images");
  auto* pretrain = app.add_subcommand("pretrain", "Pretrain the teacher and super-resolution denoisers");
  pretrain->add_option("--dump-dataset", dump, "Write this many dataset samples as PNGs");
  auto* optimize = app.add_subcommand("optimize", "Distill a texture field for a scene");
  auto* bake_cmd = app.add_subcommand("bake", "Bake a texture atlas from a checkpoint");
  bake_cmd->add_option("--checkpoint", ck, "Run directory or checkpoint bundle");
  bake_cmd->add_option("--resolution", res, "Atlas side in texels");
  bake_cmd->add_option("--tile", tile, "Tile side in texels");
  auto* render = app.add_subcommand("render", "Render views of a checkpoint");
  render->add_option("--checkpoint", ck, "Run directory or checkpoint bundle");
  render->add_option("--views", views, "Number of seeded viewpoints");
  render->add_option("--resolution", res, "Image side in pixels");
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint against its references");
  eval_cmd->add_option("--checkpoint", ck, "Run directory or checkpoint bundle");
  auto* bench = app.add_subcommand("bench", "Time baking across resolutions");
  bench->add_option("--checkpoint", ck, "Run directory or checkpoint bundle (default: a fresh field)");
  auto* ablate = app.add_subcommand("ablate", "Run the ablation variants on shared seeds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return fail("usage", e.what(), 64);
  }
  if (seed_opt->count()) g.seed = seed;

  try {
    if (*make_scene) return cmd_make_scene(g, spec_path, write_refs);
    if (*pretrain) return cmd_pretrain(g, dump);
    if (*optimize) return cmd_optimize(g);
    if (*bake_cmd) return cmd_bake(g, res, tile, ck);
    if (*render) return cmd_render(g, views, res, ck);
    if (*eval_cmd) return cmd_eval(g, ck);
    if (*bench) return cmd_bench(g, ck);
    if (*ablate) return cmd_ablate(g);
  } catch (const ConfigError& e) {
    return fail("config", e.what(), 2);
  } catch (const PathError& e) {
    return fail("path", e.what(), 3);
  } catch (const VersionError& e) {
    return fail("version", e.what(), 4);
  } catch (const ParseError& e) {
    return fail("parse", e.what(), 5);
  } catch (const DivergenceError& e) {
    return fail("divergence", e.what(), 6);
  } catch (const std::exception& e) {
    return fail("runtime", e.what(), 1);
  }
  return 0;
}
