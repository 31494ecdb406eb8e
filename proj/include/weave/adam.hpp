// Copyright 2026 The Weave Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <vector>

#include "weave/tensor.hpp"

namespace weave {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// First-order adaptive-moment optimizer with bias correction.
template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(std::size_t n, AdamConfig cfg) : cfg_(cfg), m_(n, T(0)), v_(n, T(0)) {}

  void step(std::span<T> params, std::span<const T> grad) {
    if (params.size() != m_.size() || grad.size() != m_.size())
      throw Error(str_cat("adam: size mismatch (state ", m_.size(), ", params ", params.size(), ", grad ", grad.size(), ")"));
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T step = static_cast<T>(cfg_.lr / c1);
    const T inv_c2 = static_cast<T>(1.0 / c2);
    const T eps = static_cast<T>(cfg_.epsilon);
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = b1 * m_[i] + (T(1) - b1) * grad[i];
      v_[i] = b2 * v_[i] + (T(1) - b2) * grad[i] * grad[i];
      params[i] -= step * m_[i] / (std::sqrt(v_[i] * inv_c2) + eps);
    }
  }

  std::int64_t steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  std::size_t size() const { return m_.size(); }

  void write(std::ostream& os) const {
    const std::uint64_t n = m_.size();
    os.write(reinterpret_cast<const char*>(&t_), sizeof t_);
    os.write(reinterpret_cast<const char*>(&n), sizeof n);
    os.write(reinterpret_cast<const char*>(m_.data()), static_cast<std::streamsize>(n * sizeof(T)));
    os.write(reinterpret_cast<const char*>(v_.data()), static_cast<std::streamsize>(n * sizeof(T)));
  }

  void read(std::istream& is) {
    std::uint64_t n = 0;
    is.read(reinterpret_cast<char*>(&t_), sizeof t_);
    is.read(reinterpret_cast<char*>(&n), sizeof n);
    if (!is || n != m_.size()) throw Error(str_cat("adam: state size ", n, " does not match parameter count ", m_.size()));
    is.read(reinterpret_cast<char*>(m_.data()), static_cast<std::streamsize>(n * sizeof(T)));
    is.read(reinterpret_cast<char*>(v_.data()), static_cast<std::streamsize>(n * sizeof(T)));
    if (!is) throw Error("adam: truncated state");
  }

  bool operator==(const Adam& o) const { return t_ == o.t_ && m_ == o.m_ && v_ == o.v_; }

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<T> m_, v_;
};

}  // namespace weave
