// Copyright 2026 The Weave Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "weave/tensor.hpp"

namespace weave {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
ConstMatMap<T> as_mat(const Tensor<T>& t, int rows, int cols) {
  return ConstMatMap<T>(t.data(), rows, cols);
}
template <typename T>
MatMap<T> as_mat(Tensor<T>& t, int rows, int cols) {
  return MatMap<T>(t.data(), rows, cols);
}

// Reverse-mode tape over dense tensors. Nodes are appended in evaluation
// order; backward() walks them in reverse. Ops whose inputs are all constants
// record no closure, so a forward pass over frozen weights stays cheap.
template <typename T>
class Tape {
 public:
  using Var = int;
  using Backward = std::function<void(const Tensor<T>& out_grad)>;

  Var constant(Tensor<T> v) { return push(std::move(v), false); }
  Var param(Tensor<T> v) { return push(std::move(v), true); }

  const Tensor<T>& value(Var v) const { return nodes_[idx(v)].value; }
  bool requires_grad(Var v) const { return nodes_[idx(v)].requires_grad; }

  // Gradient of the seeded output with respect to v (zeros if unreached).
  Tensor<T> grad(Var v) const {
    const auto& n = nodes_[idx(v)];
    return n.grad.empty() ? Tensor<T>::zeros_like(n.value) : n.grad;
  }

  void backward(Var out, const Tensor<T>& seed) {
    if (!seed.same_shape(value(out))) throw Error("tape: seed shape mismatch");
    if (!requires_grad(out)) return;
    acc(out) += seed;
    for (Var i = out; i >= 0; --i) {
      auto& node = nodes_[idx(i)];
      if (node.backward && !node.grad.empty()) {
        // The closure may append to other nodes' grads only; node.grad is stable.
        node.backward(node.grad);
      }
    }
  }

  Var record(Tensor<T> v, std::initializer_list<Var> inputs, Backward back) {
    bool rg = false;
    for (Var i : inputs) rg = rg || requires_grad(i);
    return record_if(std::move(v), rg, std::move(back));
  }
  Var record_if(Tensor<T> v, bool rg, Backward back) {
    Var id = push(std::move(v), rg);
    if (rg) nodes_.back().backward = std::move(back);
    return id;
  }

  // Gradient accumulator of v, allocated on first use.
  Tensor<T>& acc(Var v) {
    auto& n = nodes_[idx(v)];
    if (n.grad.empty()) n.grad = Tensor<T>::zeros_like(n.value);
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    Backward backward;
  };

  static std::size_t idx(Var v) { return static_cast<std::size_t>(v); }

  Var push(Tensor<T> v, bool rg) {
    nodes_.push_back(Node{std::move(v), {}, rg, {}});
    return static_cast<Var>(nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

namespace ops {

template <typename T>
using Var = typename Tape<T>::Var;

// (m,k) x (k,n)
template <typename T>
Var<T> matmul(Tape<T>& tp, Var<T> a, Var<T> b) {
  const auto& A = tp.value(a);
  const auto& B = tp.value(b);
  const int m = A.dim(0), k = A.dim(1), n = B.dim(1);
  if (B.dim(0) != k) throw Error(str_cat("matmul: inner dimension mismatch ", shape_string(A), " x ", shape_string(B)));
  Tensor<T> C({m, n});
  as_mat(C, m, n).noalias() = as_mat(A, m, k) * as_mat(B, k, n);
  return tp.record(std::move(C), {a, b}, [&tp, a, b, m, k, n](const Tensor<T>& g) {
    const auto G = as_mat(g, m, n);
    if (tp.requires_grad(a)) as_mat(tp.acc(a), m, k).noalias() += G * as_mat(tp.value(b), k, n).transpose();
    if (tp.requires_grad(b)) as_mat(tp.acc(b), k, n).noalias() += as_mat(tp.value(a), m, k).transpose() * G;
  });
}

// (m,k) x (n,k)^T
template <typename T>
Var<T> matmul_nt(Tape<T>& tp, Var<T> a, Var<T> b) {
  const auto& A = tp.value(a);
  const auto& B = tp.value(b);
  const int m = A.dim(0), k = A.dim(1), n = B.dim(0);
  if (B.dim(1) != k) throw Error(str_cat("matmul_nt: inner dimension mismatch ", shape_string(A), " x ", shape_string(B), "^T"));
  Tensor<T> C({m, n});
  as_mat(C, m, n).noalias() = as_mat(A, m, k) * as_mat(B, n, k).transpose();
  return tp.record(std::move(C), {a, b}, [&tp, a, b, m, k, n](const Tensor<T>& g) {
    const auto G = as_mat(g, m, n);
    if (tp.requires_grad(a)) as_mat(tp.acc(a), m, k).noalias() += G * as_mat(tp.value(b), n, k);
    if (tp.requires_grad(b)) as_mat(tp.acc(b), n, k).noalias() += G.transpose() * as_mat(tp.value(a), m, k);
  });
}

template <typename T>
Var<T> add(Tape<T>& tp, Var<T> a, Var<T> b) {
  const auto& A = tp.value(a);
  const auto& B = tp.value(b);
  if (!A.same_shape(B)) throw Error(str_cat("add: shape mismatch ", shape_string(A), " vs ", shape_string(B)));
  return tp.record(A + B, {a, b}, [&tp, a, b](const Tensor<T>& g) {
    if (tp.requires_grad(a)) tp.acc(a) += g;
    if (tp.requires_grad(b)) tp.acc(b) += g;
  });
}

template <typename T>
Var<T> sub(Tape<T>& tp, Var<T> a, Var<T> b) {
  const auto& A = tp.value(a);
  const auto& B = tp.value(b);
  if (!A.same_shape(B)) throw Error(str_cat("sub: shape mismatch ", shape_string(A), " vs ", shape_string(B)));
  return tp.record(A - B, {a, b}, [&tp, a, b](const Tensor<T>& g) {
    if (tp.requires_grad(a)) tp.acc(a) += g;
    if (tp.requires_grad(b)) tp.acc(b) -= g;
  });
}

template <typename T>
Var<T> scale(Tape<T>& tp, Var<T> a, T s) {
  return tp.record(tp.value(a) * s, {a}, [&tp, a, s](const Tensor<T>& g) {
    auto& da = tp.acc(a);
    for (std::size_t i = 0; i < g.size(); ++i) da[i] += s * g[i];
  });
}

// Sum of same-shaped tensors in list order.
template <typename T>
Var<T> sum(Tape<T>& tp, const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw Error("sum: empty list");
  Tensor<T> out = tp.value(xs[0]);
  bool rg = tp.requires_grad(xs[0]);
  for (std::size_t i = 1; i < xs.size(); ++i) {
    out += tp.value(xs[i]);
    rg = rg || tp.requires_grad(xs[i]);
  }
  return tp.record_if(std::move(out), rg, [&tp, xs](const Tensor<T>& g) {
    for (Var<T> x : xs)
      if (tp.requires_grad(x)) tp.acc(x) += g;
  });
}

// x (m,n) with every row multiplied by the constant weight w[row].
template <typename T>
Var<T> scale_rows(Tape<T>& tp, Var<T> x, const Tensor<T>& w) {
  const auto& X = tp.value(x);
  const int m = X.dim(0), n = X.dim(1);
  if (w.size() != static_cast<std::size_t>(m)) throw Error("scale_rows: weight count does not match rows");
  Tensor<T> out = X;
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < n; ++c) out.at(r, c) *= w[static_cast<std::size_t>(r)];
  return tp.record(std::move(out), {x}, [&tp, x, w, m, n](const Tensor<T>& g) {
    auto& dx = tp.acc(x);
    for (int r = 0; r < m; ++r)
      for (int c = 0; c < n; ++c) dx.at(r, c) += w[static_cast<std::size_t>(r)] * g.at(r, c);
  });
}

// x (C,H,W) times a constant (1,H,W) map broadcast over channels.
template <typename T>
Var<T> scale_pixels(Tape<T>& tp, Var<T> x, const Tensor<T>& w) {
  const auto& X = tp.value(x);
  const std::size_t plane = static_cast<std::size_t>(X.dim(1)) * X.dim(2);
  if (w.size() != plane) throw Error("scale_pixels: map size does not match feature plane");
  Tensor<T> out = X;
  const int C = X.dim(0);
  for (int c = 0; c < C; ++c)
    for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] *= w[i];
  return tp.record(std::move(out), {x}, [&tp, x, w, plane, C](const Tensor<T>& g) {
    auto& dx = tp.acc(x);
    for (int c = 0; c < C; ++c)
      for (std::size_t i = 0; i < plane; ++i) dx[c * plane + i] += w[i] * g[c * plane + i];
  });
}

// x (m,n) + b (1,n) broadcast over rows.
template <typename T>
Var<T> add_row_bias(Tape<T>& tp, Var<T> x, Var<T> b) {
  const auto& X = tp.value(x);
  const int m = X.dim(0), n = X.dim(1);
  if (tp.value(b).size() != static_cast<std::size_t>(n)) throw Error("add_row_bias: bias size mismatch");
  Tensor<T> out = X;
  const auto& B = tp.value(b);
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < n; ++c) out.at(r, c) += B[static_cast<std::size_t>(c)];
  return tp.record(std::move(out), {x, b}, [&tp, x, b, m, n](const Tensor<T>& g) {
    if (tp.requires_grad(x)) tp.acc(x) += g;
    if (tp.requires_grad(b)) {
      auto& db = tp.acc(b);
      for (int r = 0; r < m; ++r)
        for (int c = 0; c < n; ++c) db[static_cast<std::size_t>(c)] += g.at(r, c);
    }
  });
}

// x (C,H,W) + b (C entries) broadcast over pixels.
template <typename T>
Var<T> add_channel_bias(Tape<T>& tp, Var<T> x, Var<T> b) {
  const auto& X = tp.value(x);
  const int C = X.dim(0);
  const std::size_t plane = static_cast<std::size_t>(X.dim(1)) * X.dim(2);
  if (tp.value(b).size() != static_cast<std::size_t>(C)) throw Error("add_channel_bias: bias size mismatch");
  Tensor<T> out = X;
  const auto& B = tp.value(b);
  for (int c = 0; c < C; ++c)
    for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] += B[static_cast<std::size_t>(c)];
  return tp.record(std::move(out), {x, b}, [&tp, x, b, C, plane](const Tensor<T>& g) {
    if (tp.requires_grad(x)) tp.acc(x) += g;
    if (tp.requires_grad(b)) {
      auto& db = tp.acc(b);
      for (int c = 0; c < C; ++c) {
        T s = 0;
        for (std::size_t i = 0; i < plane; ++i) s += g[c * plane + i];
        db[static_cast<std::size_t>(c)] += s;
      }
    }
  });
}

template <typename T>
Var<T> silu(Tape<T>& tp, Var<T> x) {
  const auto& X = tp.value(x);
  Tensor<T> out = X;
  for (auto& v : out.vec()) v = v / (T(1) + std::exp(-v));
  return tp.record(std::move(out), {x}, [&tp, x](const Tensor<T>& g) {
    const auto& X = tp.value(x);
    auto& dx = tp.acc(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T s = T(1) / (T(1) + std::exp(-X[i]));
      dx[i] += g[i] * s * (T(1) + X[i] * (T(1) - s));
    }
  });
}

// Row-wise softmax of (m,n).
template <typename T>
Var<T> softmax_rows(Tape<T>& tp, Var<T> x) {
  const auto& X = tp.value(x);
  const int m = X.dim(0), n = X.dim(1);
  Tensor<T> out({m, n});
  for (int r = 0; r < m; ++r) {
    T mx = X.at(r, 0);
    for (int c = 1; c < n; ++c) mx = std::max(mx, X.at(r, c));
    T s = 0;
    for (int c = 0; c < n; ++c) s += (out.at(r, c) = std::exp(X.at(r, c) - mx));
    for (int c = 0; c < n; ++c) out.at(r, c) /= s;
  }
  Tensor<T> y = out;
  return tp.record(std::move(out), {x}, [&tp, x, y = std::move(y), m, n](const Tensor<T>& g) {
    auto& dx = tp.acc(x);
    for (int r = 0; r < m; ++r) {
      T d = 0;
      for (int c = 0; c < n; ++c) d += g.at(r, c) * y.at(r, c);
      for (int c = 0; c < n; ++c) dx.at(r, c) += y.at(r, c) * (g.at(r, c) - d);
    }
  });
}

template <typename T>
Var<T> transpose(Tape<T>& tp, Var<T> x) {
  const auto& X = tp.value(x);
  const int m = X.dim(0), n = X.dim(1);
  Tensor<T> out({n, m});
  as_mat(out, n, m) = as_mat(X, m, n).transpose();
  return tp.record(std::move(out), {x}, [&tp, x, m, n](const Tensor<T>& g) {
    as_mat(tp.acc(x), m, n) += as_mat(g, n, m).transpose();
  });
}

template <typename T>
Var<T> reshape(Tape<T>& tp, Var<T> x, std::vector<int> shape) {
  Tensor<T> out = tp.value(x).reshaped(std::move(shape));
  return tp.record(std::move(out), {x}, [&tp, x](const Tensor<T>& g) {
    auto& dx = tp.acc(x);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
  });
}

// Channel concatenation of (C_i, H, W) tensors.
template <typename T>
Var<T> concat_channels(Tape<T>& tp, const std::vector<Var<T>>& xs) {
  const int H = tp.value(xs[0]).dim(1), W = tp.value(xs[0]).dim(2);
  int C = 0;
  bool rg = false;
  for (Var<T> x : xs) {
    if (tp.value(x).dim(1) != H || tp.value(x).dim(2) != W) throw Error("concat_channels: spatial size mismatch");
    C += tp.value(x).dim(0);
    rg = rg || tp.requires_grad(x);
  }
  Tensor<T> out({C, H, W});
  std::size_t off = 0;
  for (Var<T> x : xs) {
    const auto& v = tp.value(x);
    std::copy(v.vec().begin(), v.vec().end(), out.vec().begin() + static_cast<std::ptrdiff_t>(off));
    off += v.size();
  }
  return tp.record_if(std::move(out), rg, [&tp, xs](const Tensor<T>& g) {
    std::size_t off = 0;
    for (Var<T> x : xs) {
      const std::size_t n = tp.value(x).size();
      if (tp.requires_grad(x)) {
        auto& dx = tp.acc(x);
        for (std::size_t i = 0; i < n; ++i) dx[i] += g[off + i];
      }
      off += n;
    }
  });
}

// 2x2 average pooling of (C,H,W) with even H, W.
template <typename T>
Tensor<T> avgpool2(const Tensor<T>& X) {
  const int C = X.dim(0), H = X.dim(1), W = X.dim(2);
  if (H % 2 || W % 2) throw Error("avgpool2: spatial size must be even");
  Tensor<T> out({C, H / 2, W / 2});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H / 2; ++y)
      for (int x = 0; x < W / 2; ++x)
        out.at(c, y, x) =
            T(0.25) * (X.at(c, 2 * y, 2 * x) + X.at(c, 2 * y, 2 * x + 1) + X.at(c, 2 * y + 1, 2 * x) + X.at(c, 2 * y + 1, 2 * x + 1));
  return out;
}

// Nearest-neighbour 2x upsampling of (C,H,W).
template <typename T>
Tensor<T> upsample2(const Tensor<T>& X) {
  const int C = X.dim(0), H = X.dim(1), W = X.dim(2);
  Tensor<T> out({C, 2 * H, 2 * W});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < 2 * H; ++y)
      for (int x = 0; x < 2 * W; ++x) out.at(c, y, x) = X.at(c, y / 2, x / 2);
  return out;
}

template <typename T>
Var<T> avgpool2(Tape<T>& tp, Var<T> x) {
  return tp.record(avgpool2(tp.value(x)), {x}, [&tp, x](const Tensor<T>& g) {
    auto& dx = tp.acc(x);
    const int C = dx.dim(0), H = dx.dim(1), W = dx.dim(2);
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) dx.at(c, y, xx) += T(0.25) * g.at(c, y / 2, xx / 2);
  });
}

template <typename T>
Var<T> upsample2(Tape<T>& tp, Var<T> x) {
  return tp.record(upsample2(tp.value(x)), {x}, [&tp, x](const Tensor<T>& g) {
    auto& dx = tp.acc(x);
    const int C = g.dim(0), H = g.dim(1), W = g.dim(2);
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int xx = 0; xx < W; ++xx) dx.at(c, y / 2, xx / 2) += g.at(c, y, xx);
  });
}

namespace detail {

// (C,H,W) -> (C*k*k, H*W) patches with zero padding k/2.
template <typename T>
Tensor<T> im2col(const Tensor<T>& X, int k) {
  const int C = X.dim(0), H = X.dim(1), W = X.dim(2), p = k / 2;
  Tensor<T> cols({C * k * k, H * W});
  T* out = cols.data();
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        for (int y = 0; y < H; ++y) {
          const int sy = y + ky - p;
          for (int x = 0; x < W; ++x) {
            const int sx = x + kx - p;
            *out++ = (sy >= 0 && sy < H && sx >= 0 && sx < W) ? X.at(c, sy, sx) : T(0);
          }
        }
      }
  return cols;
}

template <typename T>
void col2im_add(const Tensor<T>& cols, int k, Tensor<T>& dX) {
  const int C = dX.dim(0), H = dX.dim(1), W = dX.dim(2), p = k / 2;
  const T* in = cols.data();
  for (int c = 0; c < C; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        for (int y = 0; y < H; ++y) {
          const int sy = y + ky - p;
          for (int x = 0; x < W; ++x, ++in) {
            const int sx = x + kx - p;
            if (sy >= 0 && sy < H && sx >= 0 && sx < W) dX.at(c, sy, sx) += *in;
          }
        }
      }
}

}  // namespace detail

// Same-size convolution: x (Cin,H,W), w (Cout, Cin*k*k), b (Cout).
template <typename T>
Var<T> conv2d(Tape<T>& tp, Var<T> x, Var<T> w, Var<T> b, int k) {
  const auto& X = tp.value(x);
  const auto& Wt = tp.value(w);
  const int Cin = X.dim(0), H = X.dim(1), Wd = X.dim(2), Cout = Wt.dim(0), K = Cin * k * k;
  if (Wt.dim(1) != K) throw Error(str_cat("conv2d: weight ", shape_string(Wt), " does not match input ", shape_string(X)));
  if (tp.value(b).size() != static_cast<std::size_t>(Cout)) throw Error("conv2d: bias size mismatch");
  const int S = H * Wd;
  Tensor<T> cols = k == 1 ? X.reshaped({Cin, S}) : detail::im2col(X, k);
  Tensor<T> Y({Cout, H, Wd});
  auto Ym = as_mat(Y, Cout, S);
  Ym.noalias() = as_mat(Wt, Cout, K) * as_mat(cols, K, S);
  const auto& B = tp.value(b);
  for (int c = 0; c < Cout; ++c) Ym.row(c).array() += B[static_cast<std::size_t>(c)];
  const bool rg = tp.requires_grad(x) || tp.requires_grad(w) || tp.requires_grad(b);
  if (!rg) return tp.constant(std::move(Y));
  return tp.record_if(std::move(Y), true, [&tp, x, w, b, k, Cin, H, Wd, Cout, K, S, cols = std::move(cols)](const Tensor<T>& g) {
    const auto G = as_mat(g, Cout, S);
    if (tp.requires_grad(w)) as_mat(tp.acc(w), Cout, K).noalias() += G * as_mat(cols, K, S).transpose();
    if (tp.requires_grad(b)) {
      auto& db = tp.acc(b);
      for (int c = 0; c < Cout; ++c) db[static_cast<std::size_t>(c)] += G.row(c).sum();
    }
    if (tp.requires_grad(x)) {
      Tensor<T> dcols({K, S});
      as_mat(dcols, K, S).noalias() = as_mat(tp.value(w), Cout, K).transpose() * G;
      if (k == 1) tp.acc(x) += dcols.reshaped({Cin, H, Wd});
      else detail::col2im_add(dcols, k, tp.acc(x));
    }
  });
}

// Mean squared error against a constant target, as a (1) tensor.
template <typename T>
Var<T> mse(Tape<T>& tp, Var<T> x, const Tensor<T>& target) {
  const auto& X = tp.value(x);
  if (!X.same_shape(target)) throw Error("mse: shape mismatch");
  T s = 0;
  for (std::size_t i = 0; i < X.size(); ++i) {
    const T d = X[i] - target[i];
    s += d * d;
  }
  const T n = static_cast<T>(X.size());
  return tp.record(Tensor<T>({1}, std::vector<T>{s / n}), {x}, [&tp, x, target, n](const Tensor<T>& g) {
    const auto& X = tp.value(x);
    auto& dx = tp.acc(x);
    for (std::size_t i = 0; i < X.size(); ++i) dx[i] += g[0] * T(2) * (X[i] - target[i]) / n;
  });
}

}  // namespace ops
}  // namespace weave
