// Copyright 2026 The Weave Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <functional>

#include "weave/autodiff.hpp"
#include "weave/rng.hpp"

namespace weave {
namespace {

using Tp = Tape<double>;
using V = Tp::Var;
using Builder = std::function<V(Tp&, const std::vector<V>&)>;

Tensor<double> random_tensor(std::vector<int> shape, Rng& rng) {
  Tensor<double> t(std::move(shape));
  rng.fill_normal(t);
  return t;
}

// Compares tape gradients of <r, f(inputs)> with central differences.
void check_gradients(const std::vector<Tensor<double>>& inputs, const Builder& build, double tol = 1e-6) {
  Rng rng(99);
  Tp tp;
  std::vector<V> vars;
  for (const auto& x : inputs) vars.push_back(tp.param(x));
  const V out = build(tp, vars);
  const Tensor<double> r = random_tensor(tp.value(out).shape(), rng);
  tp.backward(out, r);

  auto objective = [&](const std::vector<Tensor<double>>& xs) {
    Tp t2;
    std::vector<V> vs;
    for (const auto& x : xs) vs.push_back(t2.constant(x));
    const auto& y = t2.value(build(t2, vs));
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += r[i] * y[i];
    return s;
  };
  for (std::size_t a = 0; a < inputs.size(); ++a) {
    const Tensor<double> g = tp.grad(vars[a]);
    for (std::size_t i = 0; i < inputs[a].size(); ++i) {
      auto up = inputs, dn = inputs;
      up[a][i] += 1e-6;
      dn[a][i] -= 1e-6;
      const double fd = (objective(up) - objective(dn)) / 2e-6;
      EXPECT_NEAR(g[i], fd, tol * std::max(1.0, std::abs(fd))) << "input " << a << " element " << i;
    }
  }
}

TEST(Autodiff, Matmul) {
  Rng rng(1);
  check_gradients({random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)},
                  [](Tp& tp, const std::vector<V>& v) { return ops::matmul(tp, v[0], v[1]); });
  check_gradients({random_tensor({3, 4}, rng), random_tensor({5, 4}, rng)},
                  [](Tp& tp, const std::vector<V>& v) { return ops::matmul_nt(tp, v[0], v[1]); });
}

TEST(Autodiff, Elementwise) {
  Rng rng(2);
  check_gradients({random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)}, [](Tp& tp, const std::vector<V>& v) {
    return ops::silu(tp, ops::scale(tp, ops::sub(tp, ops::add(tp, v[0], v[1]), v[1]), 0.7));
  });
  check_gradients({random_tensor({2, 3}, rng), random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)},
                  [](Tp& tp, const std::vector<V>& v) { return ops::sum(tp, v); });
}

TEST(Autodiff, SoftmaxAndTranspose) {
  Rng rng(3);
  check_gradients({random_tensor({3, 5}, rng)}, [](Tp& tp, const std::vector<V>& v) {
    return ops::transpose(tp, ops::softmax_rows(tp, v[0]));
  });
}

TEST(Autodiff, SoftmaxRowsSumToOne) {
  Rng rng(4);
  Tp tp;
  const auto& y = tp.value(ops::softmax_rows(tp, tp.constant(random_tensor({4, 6}, rng) * 30.0)));
  for (int r = 0; r < 4; ++r) {
    double s = 0;
    for (int c = 0; c < 6; ++c) s += y.at(r, c);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Autodiff, BiasesAndScaling) {
  Rng rng(5);
  const Tensor<double> rows = random_tensor({3}, rng);
  check_gradients({random_tensor({3, 4}, rng), random_tensor({4}, rng)}, [&](Tp& tp, const std::vector<V>& v) {
    return ops::scale_rows(tp, ops::add_row_bias(tp, v[0], v[1]), rows);
  });
  const Tensor<double> pix = random_tensor({1, 3, 2}, rng);
  check_gradients({random_tensor({2, 3, 2}, rng), random_tensor({2}, rng)}, [&](Tp& tp, const std::vector<V>& v) {
    return ops::scale_pixels(tp, ops::add_channel_bias(tp, v[0], v[1]), pix);
  });
}

TEST(Autodiff, ReshapeConcatPooling) {
  Rng rng(6);
  check_gradients({random_tensor({2, 4, 4}, rng), random_tensor({1, 4, 4}, rng)}, [](Tp& tp, const std::vector<V>& v) {
    const V c = ops::concat_channels(tp, std::vector<V>{v[0], v[1]});
    const V p = ops::avgpool2(tp, c);
    return ops::reshape(tp, ops::upsample2(tp, p), {3, 16});
  });
}

TEST(Autodiff, Conv2d) {
  Rng rng(7);
  for (int k : {1, 3}) {
    check_gradients({random_tensor({2, 5, 4}, rng), random_tensor({3, 2 * k * k}, rng), random_tensor({3}, rng)},
                    [k](Tp& tp, const std::vector<V>& v) { return ops::conv2d(tp, v[0], v[1], v[2], k); });
  }
}

TEST(Autodiff, Conv2dMatchesDirectConvolution) {
  Rng rng(8);
  const auto x = random_tensor({2, 4, 5}, rng);
  const auto w = random_tensor({3, 18}, rng);
  const auto b = random_tensor({3}, rng);
  Tp tp;
  const auto& y = tp.value(ops::conv2d(tp, tp.constant(x), tp.constant(w), tp.constant(b), 3));
  for (int o = 0; o < 3; ++o)
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 5; ++c) {
        double s = b[static_cast<std::size_t>(o)];
        for (int i = 0; i < 2; ++i)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int sy = r + ky - 1, sx = c + kx - 1;
              if (sy < 0 || sy >= 4 || sx < 0 || sx >= 5) continue;
              s += w.at(o, (i * 3 + ky) * 3 + kx) * x.at(i, sy, sx);
            }
        EXPECT_NEAR(y.at(o, r, c), s, 1e-12);
      }
}

TEST(Autodiff, Mse) {
  Rng rng(9);
  const Tensor<double> target = random_tensor({2, 3}, rng);
  check_gradients({random_tensor({2, 3}, rng)}, [&](Tp& tp, const std::vector<V>& v) { return ops::mse(tp, v[0], target); });
}

TEST(Autodiff, ConstantsReceiveNoGradient) {
  Tp tp;
  const V a = tp.constant(Tensor<double>({2}, 1.0));
  const V b = tp.param(Tensor<double>({2}, 2.0));
  const V y = ops::add(tp, a, b);
  tp.backward(y, Tensor<double>({2}, 1.0));
  EXPECT_FALSE(tp.requires_grad(a));
  EXPECT_EQ(tp.grad(a).vec(), (std::vector<double>{0, 0}));
  EXPECT_EQ(tp.grad(b).vec(), (std::vector<double>{1, 1}));
}

}  // namespace
}  // namespace weave
