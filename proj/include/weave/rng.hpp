// Copyright 2026 The Weave Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

#include "weave/tensor.hpp"

namespace weave {

// Seeded stream with platform-stable draws. The std distributions are
// implementation-defined, so uniform/normal are computed here from the raw
// 64-bit engine output. State round-trips through save()/restore().
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // [0, 1)
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  std::uint64_t index(std::uint64_t n) {
    if (n == 0) throw Error("rng: empty range");
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
  }

  // Box-Muller, no cached second value so the state is the engine alone.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  template <typename T>
  void fill_normal(Tensor<T>& t, double scale = 1.0) {
    for (auto& v : t.vec()) v = static_cast<T>(scale * normal());
  }
  template <typename T>
  void fill_uniform(Tensor<T>& t, double lo, double hi) {
    for (auto& v : t.vec()) v = static_cast<T>(uniform(lo, hi));
  }

  std::string save() const {
    std::ostringstream oss;
    oss << engine_;
    return oss.str();
  }
  void restore(const std::string& s) {
    std::istringstream iss(s);
    iss >> engine_;
    if (!iss) throw Error("rng: malformed state");
  }

  friend bool operator==(const Rng& a, const Rng& b) { return a.engine_ == b.engine_; }

 private:
  std::mt19937_64 engine_;
};

// Independent child seed for a named stream.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace weave
