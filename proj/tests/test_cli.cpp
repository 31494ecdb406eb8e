// Copyright 2026 The Weave Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>

#include "weave/scene.hpp"

namespace weave {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code = -1;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

Result run(const std::string& args) {
  const fs::path err = fs::temp_directory_path() / "weave_cli_stderr.txt";
  const std::string cmd = std::string(WEAVE_CLI_PATH) + " " + args + " > /dev/null 2> " + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(err)};
}

// Exactly one line of the form: weave-error kind=<kind> message="..."
bool is_error_line(const std::string& s, const std::string& kind) {
  return std::regex_match(s, std::regex("weave-error kind=" + kind + " message=\"[^\\n]*\"\\n"));
}

class Cli : public ::testing::Test {
 protected:
  static fs::path root() { return fs::temp_directory_path() / "weave_cli"; }
  static std::string common() {
    const fs::path r = root();
    return " --quiet --set paths.scene=" + (r / "scene" / "scene.txt").string() + " --set paths.teacher=" + (r / "models" / "models" / "teacher.wmdl").string() +
           " --set paths.sr=" + (r / "models" / "models" / "sr.wmdl").string() +
           " --set distill.iterations=10 --set distill.view_count=8 --set distill.render_size=32 --set distill.anneal_start=2"
           " --set distill.anneal_end=4 --set distill.sr_start=2 --set distill.checkpoint_every=5";
  }
  static void SetUpTestSuite() {
    fs::remove_all(root());
    const fs::path r = root();
    ASSERT_EQ(run("make-scene --quiet --write-references --out " + (r / "scene").string()).code, 0);
    ASSERT_EQ(run("pretrain --quiet --out " + (r / "models").string() +
                  " --set pretrain_teacher.steps=3 --set pretrain_sr.steps=3 --set dataset.scenes=2 --set dataset.views_per_scene=2")
                  .code,
              0);
  }
  static void TearDownTestSuite() { fs::remove_all(root()); }
};

TEST_F(Cli, MakeSceneWritesValidSceneAndManifest) {
  const fs::path dir = root() / "scene";
  EXPECT_TRUE(validate_scene(load_scene((dir / "scene.txt").string())).empty());
  EXPECT_TRUE(fs::exists(dir / "ref_0.png"));
  EXPECT_TRUE(fs::exists(dir / "config.ini"));
  const std::string m = slurp(dir / "manifest.txt");
  EXPECT_NE(m.find("command = make-scene"), std::string::npos);
  EXPECT_NE(m.find("seed = "), std::string::npos);
  EXPECT_NE(m.find("version = "), std::string::npos);
}

TEST_F(Cli, MakeSceneFromSpecFile) {
  const fs::path spec = root() / "room.txt";
  std::ofstream(spec) << "size = 3 2 3\nbox = 1 0 1 2 1 2 1\nbox = 0.2 0 0.2 0.6 0.5 0.6 2\n";
  ASSERT_EQ(run("make-scene --quiet --spec " + spec.string() + " --out " + (root() / "spec_scene").string()).code, 0);
  const Scene s = load_scene((root() / "spec_scene" / "scene.txt").string());
  EXPECT_EQ(s.instance_count, 3);
  EXPECT_NE(slurp(root() / "spec_scene" / "manifest.txt").find("input.spec"), std::string::npos);

  std::ofstream(spec) << "size = 3 2 3\ncolour = red\n";
  const Result r = run("make-scene --quiet --spec " + spec.string() + " --out " + (root() / "bad_spec").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_TRUE(is_error_line(r.err, "config")) << r.err;
}

TEST_F(Cli, DistinctErrorKinds) {
  Result r = run("optimize --quiet --config /nonexistent/run.ini --out " + (root() / "e1").string());
  EXPECT_EQ(r.code, 3);
  EXPECT_TRUE(is_error_line(r.err, "path")) << r.err;

  r = run("optimize --quiet --set distill.no_such_key=1 --out " + (root() / "e2").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_TRUE(is_error_line(r.err, "config")) << r.err;

  r = run("optimize --quiet --set distill.iterations=lots --out " + (root() / "e3").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_TRUE(is_error_line(r.err, "config")) << r.err;

  r = run("polish");
  EXPECT_EQ(r.code, 64);
  EXPECT_TRUE(is_error_line(r.err, "usage")) << r.err;

  r = run("bake --quiet --checkpoint " + (root() / "nowhere").string() + " --out " + (root() / "e4").string());
  EXPECT_EQ(r.code, 3);
  EXPECT_TRUE(is_error_line(r.err, "path")) << r.err;

  const fs::path bad = root() / "bad_model.wmdl";
  std::ofstream(bad) << "WMDL9";
  r = run("optimize" + common() + " --set paths.teacher=" + bad.string() + " --out " + (root() / "e5").string());
  EXPECT_EQ(r.code, 4);
  EXPECT_TRUE(is_error_line(r.err, "version")) << r.err;
}

TEST_F(Cli, ConfigFileAndFlagsMerge) {
  const fs::path cfg = root() / "run.ini";
  std::ofstream(cfg) << "[run]\nseed = 5\n[bake]\nresolution = 48\n";
  ASSERT_EQ(run("bench --config " + cfg.string() + " --seed 9 --quiet --set bench.resolutions=16 --set bench.repeats=1 --out " + (root() / "merge").string()).code, 0);
  const std::string echoed = slurp(root() / "merge" / "config.ini");
  EXPECT_NE(echoed.find("seed = 9"), std::string::npos);
  EXPECT_NE(echoed.find("resolution = 48"), std::string::npos);
}

TEST_F(Cli, OptimizeIsDeterministicAndResumable) {
  const fs::path a = root() / "opt_a", b = root() / "opt_b", c = root() / "opt_c";
  const std::string scene_before = slurp(root() / "scene" / "scene.txt");
  ASSERT_EQ(run("optimize" + common() + " --out " + a.string()).code, 0);
  ASSERT_EQ(run("optimize" + common() + " --out " + b.string()).code, 0);
  EXPECT_EQ(slurp(a / "metrics.csv"), slurp(b / "metrics.csv"));
  EXPECT_EQ(slurp(a / "checkpoint" / "field.wtfx"), slurp(b / "checkpoint" / "field.wtfx"));
  EXPECT_EQ(slurp(root() / "scene" / "scene.txt"), scene_before);

  ASSERT_EQ(run("optimize" + common() + " --set distill.iterations=5 --out " + c.string()).code, 0);
  ASSERT_EQ(run("optimize" + common() + " --resume --out " + c.string()).code, 0);
  EXPECT_EQ(slurp(a / "metrics.csv"), slurp(c / "metrics.csv"));
  EXPECT_EQ(slurp(a / "checkpoint" / "state.bin"), slurp(c / "checkpoint" / "state.bin"));

  const Result r = run("optimize" + common() + " --resume --out " + (root() / "fresh").string());
  EXPECT_EQ(r.code, 3);
  EXPECT_TRUE(is_error_line(r.err, "path")) << r.err;
}

TEST_F(Cli, BakeRenderEvalBench) {
  const fs::path ck = root() / "opt_d";
  ASSERT_EQ(run("optimize" + common() + " --out " + ck.string()).code, 0);
  const std::string scene = " --set paths.scene=" + (root() / "scene" / "scene.txt").string();
  ASSERT_EQ(run("bake --quiet --checkpoint " + ck.string() + " --resolution 256 --tile 64 --out " + (root() / "b64").string() + scene).code, 0);
  ASSERT_EQ(run("bake --quiet --checkpoint " + ck.string() + " --resolution 256 --tile 256 --out " + (root() / "b256").string() + scene).code, 0);
  EXPECT_EQ(slurp(root() / "b64" / "texture.png"), slurp(root() / "b256" / "texture.png"));
  const std::string side = slurp(root() / "b64" / "texture.txt");
  EXPECT_NE(side.find("resolution = 256"), std::string::npos);
  EXPECT_NE(side.find("validity = uv coverage"), std::string::npos);

  ASSERT_EQ(run("render --checkpoint " + ck.string() + " --views 2 --out " + (root() / "r").string() + common()).code, 0);
  EXPECT_TRUE(fs::exists(root() / "r" / "render_1.png"));
  ASSERT_EQ(run("eval --checkpoint " + ck.string() + " --out " + (root() / "ev").string() + common()).code, 0);
  EXPECT_EQ(slurp(root() / "ev" / "eval.csv").rfind("instance,observed,color_error", 0), 0u);
  ASSERT_EQ(run("bench --quiet --set bench.resolutions=16,32 --set bench.repeats=1 --out " + (root() / "bn").string()).code, 0);
  EXPECT_NE(slurp(root() / "bn" / "bench.csv").find("\n32,"), std::string::npos);

  fs::copy(ck / "checkpoint", root() / "old_bundle", fs::copy_options::recursive);
  {
    std::fstream f(root() / "old_bundle" / "field.wtfx", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4);
    f.put('7');
  }
  const Result r = run("bake --quiet --checkpoint " + (root() / "old_bundle").string() + " --out " + (root() / "b_old").string());
  EXPECT_EQ(r.code, 4);
  EXPECT_TRUE(is_error_line(r.err, "version")) << r.err;
}

}  // namespace
}  // namespace weave
