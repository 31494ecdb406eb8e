// Copyright 2026 The Weave Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace weave {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename... Args>
std::string str_cat(Args&&... args) {
  std::ostringstream oss;
  (oss << ... << std::forward<Args>(args));
  return oss.str();
}

class ParseError : public Error {
 public:
  ParseError(int line, const std::string& what) : Error(str_cat("line ", line, ": ", what)), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

class VersionError : public Error {
 public:
  using Error::Error;
};

// Dense row-major array. Images and feature maps are (channels, height, width);
// matrices are (rows, cols).
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::vector<int> shape, T fill = T(0)) : shape_(std::move(shape)) {
    data_.assign(count(shape_), fill);
  }
  Tensor(std::vector<int> shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != count(shape_)) throw Error("tensor: data size does not match shape");
  }

  static Tensor zeros_like(const Tensor& o) { return Tensor(o.shape_); }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  std::vector<T>& vec() & { return data_; }
  const std::vector<T>& vec() const& { return data_; }
  std::vector<T> vec() && { return std::move(data_); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(int r, int c) { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }
  const T& at(int r, int c) const { return data_[static_cast<std::size_t>(r) * shape_[1] + c]; }
  T& at(int ch, int y, int x) { return data_[(static_cast<std::size_t>(ch) * shape_[1] + y) * shape_[2] + x]; }
  const T& at(int ch, int y, int x) const {
    return data_[(static_cast<std::size_t>(ch) * shape_[1] + y) * shape_[2] + x];
  }

  Tensor reshaped(std::vector<int> shape) const {
    if (count(shape) != data_.size()) throw Error("tensor: reshape changes element count");
    return Tensor(std::move(shape), data_);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& o) {
    check_same(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor& operator-=(const Tensor& o) {
    check_same(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Tensor& operator*=(T s) {
    for (auto& v : data_) v *= s;
    return *this;
  }
  friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
  friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
  friend Tensor operator*(Tensor a, T s) { return a *= s; }
  friend Tensor operator*(T s, Tensor a) { return a *= s; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  static std::size_t count(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
      if (d < 0) throw Error("tensor: negative dimension");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

 private:
  void check_same(const Tensor& o) const {
    if (shape_ != o.shape_) throw Error("tensor: shape mismatch");
  }

  std::vector<int> shape_;
  std::vector<T> data_;
};

template <typename T>
std::string shape_string(const Tensor<T>& t) {
  std::string s = "(";
  for (int i = 0; i < t.rank(); ++i) s += (i ? "," : "") + std::to_string(t.dim(i));
  return s + ")";
}

template <typename T>
T dot(std::span<const T> a, std::span<const T> b) {
  T acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

template <typename T>
T squared_norm(std::span<const T> a) {
  return dot(a, a);
}

}  // namespace weave
