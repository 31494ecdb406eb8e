// Copyright 2026 The Weave Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "weave/tensor.hpp"

namespace weave {

inline constexpr double kLumaR = 0.2126, kLumaG = 0.7152, kLumaB = 0.0722;

// (3, H, W) -> (1, H, W).
template <typename T>
Tensor<T> luminance(const Tensor<T>& rgb) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3) throw Error("luminance: expected an RGB image");
  const std::size_t plane = static_cast<std::size_t>(rgb.dim(1)) * rgb.dim(2);
  Tensor<T> y({1, rgb.dim(1), rgb.dim(2)});
  for (std::size_t p = 0; p < plane; ++p)
    y[p] = static_cast<T>(kLumaR * rgb[p] + kLumaG * rgb[plane + p] + kLumaB * rgb[2 * plane + p]);
  return y;
}

// Separable Gaussian blur per channel, clamp-to-edge, radius ceil(3 sigma).
template <typename T>
Tensor<T> gaussian_blur(const Tensor<T>& img, double sigma) {
  if (img.rank() != 3) throw Error("gaussian_blur: expected (C, H, W)");
  if (!(sigma > 0)) return img;
  const int r = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * r + 1);
  double sum = 0;
  for (int i = -r; i <= r; ++i) sum += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= sum;
  const int C = img.dim(0), H = img.dim(1), W = img.dim(2);
  Tensor<T> tmp(img.shape()), out(img.shape());
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double acc = 0;
        for (int i = -r; i <= r; ++i) acc += k[i + r] * img.at(c, y, std::clamp(x + i, 0, W - 1));
        tmp.at(c, y, x) = static_cast<T>(acc);
      }
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double acc = 0;
        for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp.at(c, std::clamp(y + i, 0, H - 1), x);
        out.at(c, y, x) = static_cast<T>(acc);
      }
  return out;
}

// Variance of the 4-neighbour Laplacian of luminance (or the single channel)
// over pixels whose 3x3 neighbourhood is entirely valid. Returns 0 when fewer
// than two such pixels exist.
template <typename T>
double laplacian_variance(const Tensor<T>& img, const Tensor<T>* validity = nullptr) {
  const Tensor<T> y = img.dim(0) == 3 ? luminance(img) : img;
  const int H = y.dim(1), W = y.dim(2);
  auto ok = [&](int yy, int xx) { return !validity || (*validity)[static_cast<std::size_t>(yy) * W + xx] > T(0.5); };
  double s = 0, s2 = 0;
  long n = 0;
  for (int yy = 1; yy + 1 < H; ++yy)
    for (int xx = 1; xx + 1 < W; ++xx) {
      if (!(ok(yy, xx) && ok(yy - 1, xx) && ok(yy + 1, xx) && ok(yy, xx - 1) && ok(yy, xx + 1))) continue;
      const double l = static_cast<double>(y.at(0, yy - 1, xx)) + y.at(0, yy + 1, xx) + y.at(0, yy, xx - 1) +
                       y.at(0, yy, xx + 1) - 4.0 * y.at(0, yy, xx);
      s += l;
      s2 += l * l;
      ++n;
    }
  if (n < 2) return 0.0;
  const double m = s / n;
  return std::max(0.0, s2 / n - m * m);
}

}  // namespace weave
