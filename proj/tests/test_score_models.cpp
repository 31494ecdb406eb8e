// Copyright 2026 The Weave Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>

#include "weave/image_ops.hpp"
#include "weave/models.hpp"
#include "weave/pretrain.hpp"

namespace weave {
namespace {

std::shared_ptr<UNetWeights<double>> tiny_teacher(std::uint64_t seed = 1) {
  auto w = std::make_shared<UNetWeights<double>>(UNetWeights<double>::initialized(teacher_config(8), seed));
  w->pretrained = true;
  return w;
}

Conditioning<double> tiny_conditioning(Rng& rng, int n = 2, int side = 16) {
  Conditioning<double> c;
  c.depth = Tensor<double>({1, side / 2, side / 2});
  rng.fill_uniform(c.depth, 0.0, 1.0);
  Tensor<double> id({1, side, side});
  for (auto& v : id.vec()) v = static_cast<double>(rng.index(static_cast<std::uint64_t>(n)));
  for (int i = 0; i < n; ++i) {
    Tensor<double> tok({kRefTokens, kRefTokenDim});
    rng.fill_normal(tok);
    c.tokens.push_back(tok);
    Tensor<double> m({1, side, side});
    for (std::size_t p = 0; p < m.size(); ++p) m[p] = id[p] == i ? 1 : 0;
    c.masks.push_back(m);
  }
  return c;
}

Tensor<double> random_latent(Rng& rng, int side = 8) {
  Tensor<double> x({4, side, side});
  rng.fill_normal(x);
  return x;
}

TEST(NoiseSchedule, BoundaryAndConsistency) {
  const NoiseSchedule s;
  EXPECT_NEAR(s.alpha(1e-9), 1.0, 1e-12);
  EXPECT_NEAR(s.sigma(1e-9), 0.0, 1e-8);
  double prev_a = 2, prev_s = -1;
  for (int i = 1; i <= 1000; ++i) {
    const double t = i / 1000.0;
    EXPECT_NEAR(s.alpha(t) * s.alpha(t) + s.sigma(t) * s.sigma(t), 1.0, 1e-7);
    EXPECT_LT(s.alpha(t), prev_a);
    EXPECT_GT(s.sigma(t), prev_s);
    prev_a = s.alpha(t);
    prev_s = s.sigma(t);
  }
  EXPECT_THROW(NoiseSchedule::check(0.0), Error);
  EXPECT_THROW(NoiseSchedule::check(1.5), Error);
}

TEST(NoiseSchedule, AddNoise) {
  const NoiseSchedule s;
  Rng rng(1);
  const auto x0 = random_latent(rng);
  const auto zero = Tensor<double>::zeros_like(x0);
  const auto xt = s.add_noise(x0, 0.3, zero);
  for (std::size_t i = 0; i < x0.size(); ++i) EXPECT_DOUBLE_EQ(xt[i], s.alpha(0.3) * x0[i]);
  const auto near0 = s.add_noise(x0, 1e-9, random_latent(rng));
  for (std::size_t i = 0; i < x0.size(); ++i) EXPECT_NEAR(near0[i], x0[i], 1e-7);
  EXPECT_THROW(s.add_noise(x0, 0.0, zero), Error);
  EXPECT_THROW(s.add_noise(x0, 0.5, Tensor<double>({4, 2, 2})), Error);
}

TEST(NoiseSchedule, MonteCarloVariance) {
  const NoiseSchedule s;
  Rng rng(2);
  const Tensor<double> x0({100000});
  Tensor<double> eps({100000});
  rng.fill_normal(eps);
  const auto xt = s.add_noise(x0, 0.4, eps);
  double m = 0, v = 0;
  for (double x : xt.vec()) m += x;
  m /= 1e5;
  for (double x : xt.vec()) v += (x - m) * (x - m);
  v /= 1e5;
  EXPECT_NEAR(v / (s.sigma(0.4) * s.sigma(0.4)), 1.0, 0.02);
}

TEST(NoiseSchedule, Weighting) {
  NoiseSchedule s;
  EXPECT_DOUBLE_EQ(s.weight(0.5), s.sigma(0.5) * s.sigma(0.5));
  s.weighting = parse_weighting("one");
  EXPECT_EQ(s.weight(0.5), 1.0);
  EXPECT_EQ(to_string(parse_weighting("alpha_sigma")), "alpha_sigma");
  EXPECT_THROW(parse_weighting("snr"), Error);
}

TEST(LatentCodec, ProjectionIsIdempotent) {
  Tensor<double> img({3, 8, 6});
  Rng(3).fill_uniform(img, 0.0, 1.0);
  const auto once = LatentCodec::decode(LatentCodec::encode(img));
  const auto twice = LatentCodec::decode(LatentCodec::encode(once));
  ASSERT_EQ(LatentCodec::encode(img).shape(), (std::vector<int>{4, 4, 3}));
  for (std::size_t i = 0; i < once.size(); ++i) EXPECT_NEAR(once[i], twice[i], 1e-6);
  // The block average is reproduced exactly.
  for (int c = 0; c < 3; ++c) {
    const double avg = (img.at(c, 2, 2) + img.at(c, 2, 3) + img.at(c, 3, 2) + img.at(c, 3, 3)) / 4;
    EXPECT_NEAR(once.at(c, 3, 2), avg, 1e-12);
  }
}

TEST(LatentCodec, BackwardIsAdjoint) {
  Rng rng(4);
  Tensor<double> img({3, 8, 8}), dz({4, 4, 4});
  rng.fill_uniform(img, 0.0, 1.0);
  rng.fill_normal(dz);
  const auto g = LatentCodec::encode_backward(dz);
  for (std::size_t i = 0; i < img.size(); i += 5) {
    Tensor<double> up = img, dn = img;
    up[i] += 1e-6;
    dn[i] -= 1e-6;
    const auto zu = LatentCodec::encode(up), zd = LatentCodec::encode(dn);
    double fd = 0;
    for (std::size_t k = 0; k < dz.size(); ++k) fd += dz[k] * (zu[k] - zd[k]);
    EXPECT_NEAR(g[i], fd / 2e-6, 1e-6);
  }
}

TEST(Teacher, DeterministicAndShapePreserving) {
  Rng rng(5);
  const TeacherModel<double> teacher(tiny_teacher());
  const auto c = tiny_conditioning(rng);
  const auto x = random_latent(rng);
  const auto a = teacher.predict(x, 0.4, c);
  EXPECT_EQ(a.shape(), x.shape());
  EXPECT_EQ(a, teacher.predict(x, 0.4, c));
}

TEST(Teacher, UninitializedIsRejected) {
  auto w = std::make_shared<UNetWeights<double>>(UNetWeights<double>::initialized(teacher_config(8), 1));
  Rng rng(6);
  const TeacherModel<double> teacher(w);
  try {
    teacher.predict(random_latent(rng), 0.5, tiny_conditioning(rng));
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("uninitialized teacher"), std::string::npos);
  }
}

TEST(Teacher, ZeroMaskHidesReference) {
  Rng rng(7);
  const TeacherModel<double> teacher(tiny_teacher());
  auto c = tiny_conditioning(rng);
  c.masks[1].fill(0);
  const auto x = random_latent(rng);
  const auto a = teacher.predict(x, 0.6, c);
  c.tokens[1].fill(0);
  EXPECT_EQ(teacher.predict(x, 0.6, c), a);
  rng.fill_normal(c.tokens[1]);
  c.masks[1].fill(1);
  EXPECT_NE(teacher.predict(x, 0.6, c), a);
}

TEST(Adapter, ZeroDeltasAreTheTeacherBitwise) {
  Rng rng(8);
  auto w = tiny_teacher();
  const TeacherModel<double> teacher(w);
  const AdapterModel<double> adapter(w, 4, 3);
  for (int trial = 0; trial < 3; ++trial) {
    const auto c = tiny_conditioning(rng);
    const auto x = random_latent(rng);
    const double t = rng.uniform(0.02, 0.98);
    EXPECT_EQ(adapter.predict(x, t, c), teacher.predict(x, t, c));
  }
}

TEST(Adapter, NonzeroDeltaChangesOutput) {
  Rng rng(9);
  auto w = tiny_teacher();
  AdapterModel<double> adapter(w, 4, 3);
  const auto& tg = adapter.deltas().targets()[2];
  for (int k = 0; k < tg.rows * 4; ++k) adapter.adapter_params()[tg.b_off + static_cast<std::size_t>(k)] = 0.1 * rng.normal();
  const auto c = tiny_conditioning(rng);
  const auto x = random_latent(rng);
  EXPECT_NE(adapter.predict(x, 0.5, c), TeacherModel<double>(w).predict(x, 0.5, c));
}

TEST(Adapter, DenoisingGradientMatchesFiniteDifferences) {
  Rng rng(10);
  AdapterModel<double> adapter(tiny_teacher(), 2, 3);
  for (auto& p : adapter.adapter_params()) p += 0.05 * rng.normal();
  const auto c = tiny_conditioning(rng);
  const auto x = random_latent(rng);
  const auto eps = random_latent(rng);
  auto loss = [&] {
    const auto p = adapter.predict(x, 0.45, c);
    double s = 0;
    for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - eps[i]) * (p[i] - eps[i]);
    return s;
  };
  std::vector<double> grad(adapter.adapter_params().size());
  adapter.predict_vjp(
      x, 0.45, c,
      [&](const Tensor<double>& p) {
        Tensor<double> d(p.shape());
        for (std::size_t i = 0; i < p.size(); ++i) d[i] = 2 * (p[i] - eps[i]);
        return d;
      },
      std::span<double>(grad));
  const auto params = adapter.adapter_params();
  int checked = 0;
  for (std::size_t i = 0; i < params.size(); i += 37) {
    const double keep = params[i];
    params[i] = keep + 1e-4;
    const double up = loss();
    params[i] = keep - 1e-4;
    const double dn = loss();
    params[i] = keep;
    const double fd = (up - dn) / 2e-4;
    if (std::abs(fd) < 1e-6) continue;
    EXPECT_LT(std::abs(grad[i] - fd) / std::abs(fd), 1e-3) << "param " << i;
    ++checked;
  }
  EXPECT_GT(checked, 20);
}

TEST(SRModel, DeterministicAndShapePreserving) {
  auto w = std::make_shared<UNetWeights<double>>(UNetWeights<double>::initialized(sr_config(8), 2));
  w->pretrained = true;
  const SRModel<double> sr(w);
  Rng rng(11);
  Conditioning<double> c;
  c.source = random_latent(rng);
  const auto x = random_latent(rng);
  const auto a = sr.predict(x, 0.3, c);
  EXPECT_EQ(a.shape(), x.shape());
  EXPECT_EQ(a, sr.predict(x, 0.3, c));
  EXPECT_THROW(SRModel<double>{tiny_teacher()}, Error);
}

TEST(GaussianTeacher, PointMass) {
  Rng rng(12);
  const auto mu = random_latent(rng);
  const GaussianTeacher<double> g(mu, 0.0);
  const NoiseSchedule s;
  const auto x = random_latent(rng);
  const auto e = g.predict(x, 0.35, {});
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(e[i], (x[i] - s.alpha(0.35) * mu[i]) / s.sigma(0.35), 1e-12);
}

TEST(GaussianTeacher, MatchesMonteCarloPosteriorMean) {
  // E[eps | x_t] is affine in x_t; regress eps on x_t over many draws.
  const double mu = 0.3, sigma = 0.4, t = 0.5;
  const NoiseSchedule s;
  Rng rng(13);
  double sx = 0, se = 0, sxx = 0, sxe = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double x0 = mu + sigma * rng.normal(), e = rng.normal();
    const double xt = s.alpha(t) * x0 + s.sigma(t) * e;
    sx += xt;
    se += e;
    sxx += xt * xt;
    sxe += xt * e;
  }
  const double slope = (sxe - sx * se / n) / (sxx - sx * sx / n);
  const double icpt = se / n - slope * sx / n;
  const GaussianTeacher<double> g(Tensor<double>({1}, mu), sigma);
  const double e0 = g.predict(Tensor<double>({1}, 0.0), t, {})[0];
  const double e1 = g.predict(Tensor<double>({1}, 1.0), t, {})[0];
  EXPECT_NEAR((e1 - e0) / slope, 1.0, 0.01);
  EXPECT_NEAR(e0, icpt, 0.01 * std::abs(slope));
}

TEST(GaussianTeacher, LinearInInput) {
  Rng rng(14);
  const GaussianTeacher<double> g(random_latent(rng), 0.2);
  const auto a = random_latent(rng), b = random_latent(rng);
  const auto ea = g.predict(a, 0.6, {}), eb = g.predict(b, 0.6, {}), eab = g.predict(a + b, 0.6, {});
  const auto e0 = g.predict(Tensor<double>::zeros_like(a), 0.6, {});
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(eab[i] - e0[i], (ea[i] - e0[i]) + (eb[i] - e0[i]), 1e-12);
}

TEST(ModelFiles, RoundTripAndVersion) {
  auto w = tiny_teacher(4);
  const auto dir = std::filesystem::temp_directory_path();
  save_unet(*w, (dir / "weave_unet.wmdl").string());
  const auto back = load_unet<double>((dir / "weave_unet.wmdl").string());
  // Files hold float32 weights.
  ASSERT_EQ(back.params().size(), w->params().size());
  for (std::size_t i = 0; i < back.params().size(); ++i) EXPECT_EQ(back.params()[i], static_cast<double>(static_cast<float>(w->params()[i])));
  EXPECT_TRUE(back.pretrained);

  auto f = std::make_shared<UNetWeights<float>>(UNetWeights<float>::initialized(teacher_config(8), 5));
  AdapterModel<float> adapter(f, 4, 9);
  for (auto& p : adapter.adapter_params()) p += 0.01f;
  save_lora(adapter.deltas(), f->config(), (dir / "weave_lora.wmdl").string());
  EXPECT_EQ(load_lora(*f, (dir / "weave_lora.wmdl").string()), adapter.deltas());
  std::filesystem::remove(dir / "weave_unet.wmdl");
  std::filesystem::remove(dir / "weave_lora.wmdl");
}

DatasetConfig flat_dataset() {
  DatasetConfig dc;
  dc.scenes = 2;
  dc.views_per_scene = 8;
  dc.render_size = 16;
  dc.kinds = {true, false, false};
  return dc;
}

TEST(Pretrain, BeatsZeroBaselineAndUsesReferences) {
  const ProceduralDataset data(flat_dataset(), 3);
  PretrainConfig pc;
  pc.steps = 300;
  pc.lr = 3e-3;
  pc.heldout = 64;
  PretrainReport r;
  pretrain_teacher<float>(data, pc, 1, &r, {}, teacher_config(8));
  EXPECT_LT(r.heldout_loss, 0.7 * r.baseline_loss);
  EXPECT_GT(r.heldout_loss_shuffled, r.heldout_loss);
}

TEST(Pretrain, SeededRunsAreIdentical) {
  const ProceduralDataset data(flat_dataset(), 3);
  PretrainConfig pc;
  pc.steps = 10;
  pc.heldout = 2;
  EXPECT_EQ(pretrain_teacher<float>(data, pc, 5, nullptr, {}, teacher_config(8)),
            pretrain_teacher<float>(data, pc, 5, nullptr, {}, teacher_config(8)));
}

TEST(Pretrain, SuperResolutionSharpensBlurredInput) {
  DatasetConfig dc = flat_dataset();
  dc.kinds = {false, true, true};
  dc.render_size = 32;
  const ProceduralDataset data(dc, 4);
  PretrainConfig pc;
  pc.steps = 400;
  pc.lr = 3e-3;
  pc.heldout = 8;
  const SRModel<float> sr(std::make_shared<UNetWeights<float>>(pretrain_sr<float>(data, pc, 2, nullptr, {}, sr_config(8))));
  Rng rng(77);
  double before = 0, after = 0;
  for (int i = 0; i < 8; ++i) {
    const auto s = data.sr_sample<float>(rng);
    const auto blurred = gaussian_blur(s.image, dc.sr_blur_sigma);
    before += laplacian_variance(blurred);
    after += laplacian_variance(sr_refine(sr, blurred, 0.5, 4, 10 + i));
  }
  EXPECT_GT(after, before);
}

TEST(Dataset, SamplesAreConsistent) {
  const ProceduralDataset data(flat_dataset(), 3);
  EXPECT_EQ(data.view_count(), 16u);
  Rng rng(1);
  const auto s = data.teacher_sample<double>(rng);
  EXPECT_EQ(s.x0.shape(), (std::vector<int>{4, 8, 8}));
  EXPECT_EQ(s.cond.depth.shape(), (std::vector<int>{1, 8, 8}));
  ASSERT_EQ(s.cond.tokens.size(), 2u);
  ASSERT_EQ(s.references.size(), 2u);
  const auto dir = std::filesystem::temp_directory_path() / "weave_dataset";
  std::filesystem::remove_all(dir);
  write_dataset(dir.string(), std::vector<DenoiseSample<double>>{s});
  EXPECT_TRUE(std::filesystem::exists(dir / "manifest.csv"));
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace weave
