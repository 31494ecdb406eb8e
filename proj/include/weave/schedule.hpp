// Copyright 2026 The Weave Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <numbers>
#include <string>

#include "weave/tensor.hpp"

namespace weave {

enum class Weighting { SigmaSquared, Unit, AlphaSigma };

inline Weighting parse_weighting(const std::string& s) {
  if (s == "sigma2") return Weighting::SigmaSquared;
  if (s == "one") return Weighting::Unit;
  if (s == "alpha_sigma") return Weighting::AlphaSigma;
  throw Error(str_cat("unknown weighting '", s, "' (expected sigma2, one, alpha_sigma)"));
}

inline std::string to_string(Weighting w) {
  switch (w) {
    case Weighting::SigmaSquared: return "sigma2";
    case Weighting::Unit: return "one";
    case Weighting::AlphaSigma: return "alpha_sigma";
  }
  return "?";
}

// Variance-preserving cosine schedule on t in (0, 1]:
// alpha_t = cos(pi t / 2), sigma_t = sin(pi t / 2).
struct NoiseSchedule {
  Weighting weighting = Weighting::SigmaSquared;

  static void check(double t) {
    if (!(t > 0.0 && t <= 1.0)) throw Error(str_cat("noise schedule: t = ", t, " outside (0, 1]"));
  }
  double alpha(double t) const { return std::cos(0.5 * std::numbers::pi * t); }
  double sigma(double t) const { return std::sin(0.5 * std::numbers::pi * t); }
  double weight(double t) const {
    switch (weighting) {
      case Weighting::SigmaSquared: return sigma(t) * sigma(t);
      case Weighting::Unit: return 1.0;
      case Weighting::AlphaSigma: return alpha(t) * sigma(t);
    }
    return 1.0;
  }

  template <typename T>
  Tensor<T> add_noise(const Tensor<T>& x0, double t, const Tensor<T>& eps) const {
    check(t);
    if (!x0.same_shape(eps)) throw Error("add_noise: noise shape does not match x0");
    const T a = static_cast<T>(alpha(t)), s = static_cast<T>(sigma(t));
    Tensor<T> out(x0.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + s * eps[i];
    return out;
  }
};

}  // namespace weave
