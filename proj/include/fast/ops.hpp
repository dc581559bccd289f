// Copyright 2026 The fastaudio Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Differentiable tensor operations.
//
// Binary ops broadcast their second operand into the first: shapes are
// right-aligned and every extent of `b` must equal the matching extent of `a`
// or be 1. The result always has the shape of `a`.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fast/tensor.hpp"

namespace fast {

namespace detail {

inline std::size_t normalize_axis(std::ptrdiff_t axis, std::size_t rank) {
  const auto r = static_cast<std::ptrdiff_t>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(rank));
  return static_cast<std::size_t>(axis);
}

/// Maps a flat index of `a` to the flat index of `b` broadcast into it.
class BroadcastIndex {
 public:
  BroadcastIndex(const Shape& a, const Shape& b, const char* op) {
    if (a == b) {
      kind_ = Kind::same;
      return;
    }
    if (b.size() > a.size()) fail(a, b, op);
    const std::size_t offset = a.size() - b.size();
    for (std::size_t i = 0; i < b.size(); ++i)
      if (b[i] != a[offset + i] && b[i] != 1) fail(a, b, op);

    bool suffix = true;
    for (std::size_t i = 0; i < b.size(); ++i) suffix = suffix && b[i] == a[offset + i];
    if (suffix) {
      kind_ = Kind::suffix;
      modulus_ = numel(b);
      return;
    }
    bool rows = b.size() == a.size() && !a.empty() && b.back() == 1;
    for (std::size_t i = 0; rows && i + 1 < a.size(); ++i) rows = b[i] == a[i];
    if (rows) {
      kind_ = Kind::rows;
      modulus_ = a.back();
      return;
    }

    kind_ = Kind::general;
    const std::size_t n = numel(a);
    table_.resize(n);
    Shape padded(offset, 1);
    padded.insert(padded.end(), b.begin(), b.end());
    std::vector<std::size_t> b_stride(a.size(), 0);
    std::size_t s = 1;
    for (std::size_t i = a.size(); i-- > 0;) {
      b_stride[i] = padded[i] == 1 ? 0 : s;
      s *= padded[i];
    }
    std::vector<std::size_t> idx(a.size(), 0);
    std::size_t bi = 0;
    for (std::size_t flat = 0; flat < n; ++flat) {
      table_[flat] = bi;
      for (std::size_t d = a.size(); d-- > 0;) {
        ++idx[d];
        bi += b_stride[d];
        if (idx[d] < a[d]) break;
        bi -= b_stride[d] * idx[d];
        idx[d] = 0;
      }
    }
  }

  std::size_t operator()(std::size_t i) const {
    switch (kind_) {
      case Kind::same: return i;
      case Kind::suffix: return i % modulus_;
      case Kind::rows: return i / modulus_;
      default: return table_[i];
    }
  }

 private:
  enum class Kind { same, suffix, rows, general };

  [[noreturn]] static void fail(const Shape& a, const Shape& b, const char* op) {
    throw DimensionError(std::string(op) + ": cannot broadcast " + to_string(b) + " into " + to_string(a));
  }

  Kind kind_ = Kind::same;
  std::size_t modulus_ = 1;
  std::vector<std::size_t> table_;
};

template <typename T, typename F, typename DA, typename DB>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, const char* name, F f, DA da, DB db) {
  BroadcastIndex bidx(a.shape(), b.shape(), name);
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i], bv[bidx(i)]);
  Tensor<T> result(a.shape(), std::move(out));
  record_op(result, {&a, &b}, [an = a.node(), bn = b.node(), bidx = std::move(bidx), da, db](std::span<const T> g) {
    const auto& ad = an->data;
    const auto& bd = bn->data;
    if (auto* ga = grad_sink<T>(an))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * da(ad[i], bd[bidx(i)]);
    if (auto* gb = grad_sink<T>(bn))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[bidx(i)] += g[i] * db(ad[i], bd[bidx(i)]);
  });
  return result;
}

/// `dydx(x, y)` is the local derivative given input x and output y.
template <typename T, typename F, typename D>
Tensor<T> unary_op(const Tensor<T>& x, F f, D dydx) {
  const auto xv = x.data();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  Tensor<T> result(x.shape(), std::move(out));
  std::weak_ptr<Node<T>> weak_y = result.node();
  record_op(result, {&x}, [xn = x.node(), weak_y, dydx](std::span<const T> g) {
    auto y = weak_y.lock();
    auto* gx = grad_sink<T>(xn);
    if (!gx || !y) return;
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * dydx(xn->data[i], y->data[i]);
  });
  return result;
}

// C[m,n] (+)= A[m,k] * B[k,n]
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T(0)) continue;
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,k] += G[m,n] * B[k,n]^T
template <typename T>
void gemm_nt(const T* g, const T* b, T* c, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T* brow = b + p * n;
      T acc = T(0);
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      c[i * k + p] += acc;
    }
  }
}

// C[k,n] += A[m,k]^T * G[m,n]
template <typename T>
void gemm_tn(const T* a, const T* g, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T(0)) continue;
      T* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

struct AxisSplit {
  std::size_t outer, extent, inner;
};

inline AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
                           [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
                           [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y) { return y; },
                           [](T x, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::binary_op(a, b, "div", [](T x, T y) { return x / y; }, [](T, T y) { return T(1) / y; },
                           [](T x, T y) { return -x / (y * y); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  return detail::unary_op(x, [c](T v) { return c * v; }, [c](T, T) { return c; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
  return detail::unary_op(x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return scale(x, T(-1));
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return detail::unary_op(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

/// sqrt(x + eps), elementwise.
template <typename T>
Tensor<T> sqrt_eps(const Tensor<T>& x, T eps) {
  return detail::unary_op(x, [eps](T v) { return std::sqrt(v + eps); }, [](T, T y) { return T(0.5) / y; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary_op(x, [](T v) { return v > T(0) ? v : T(0); },
                          [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
T sigmoid_scalar(T v) {
  if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return detail::unary_op(x, [](T v) { return sigmoid_scalar(v); }, [](T, T y) { return y * (T(1) - y); });
}

/// x * sigmoid(x)
template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  return detail::unary_op(
      x, [](T v) { return v * sigmoid_scalar(v); },
      [](T v, T) {
        const T s = sigmoid_scalar(v);
        return s * (T(1) + v * (T(1) - s));
      });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = T(0);
  for (T v : x.data()) acc += v;
  Tensor<T> result = Tensor<T>::scalar(acc);
  detail::record_op(result, {&x}, [xn = x.node()](std::span<const T> g) {
    if (auto* gx = detail::grad_sink<T>(xn))
      for (auto& v : *gx) v += g[0];
  });
  return result;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

template <typename T>
Tensor<T> sum_axis(const Tensor<T>& x, std::ptrdiff_t axis, bool keepdim = false) {
  const std::size_t ax = detail::normalize_axis(axis, x.rank());
  const auto s = detail::split_at(x.shape(), ax);
  Shape out_shape = x.shape();
  if (keepdim)
    out_shape[ax] = 1;
  else
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  std::vector<T> out(s.outer * s.inner, T(0));
  const auto xv = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < s.extent; ++e) {
      const T* src = xv.data() + (o * s.extent + e) * s.inner;
      T* dst = out.data() + o * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
    }
  Tensor<T> result(std::move(out_shape), std::move(out));
  detail::record_op(result, {&x}, [xn = x.node(), s](std::span<const T> g) {
    auto* gx = detail::grad_sink<T>(xn);
    if (!gx) return;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t e = 0; e < s.extent; ++e) {
        T* dst = gx->data() + (o * s.extent + e) * s.inner;
        const T* src = g.data() + o * s.inner;
        for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
      }
  });
  return result;
}

template <typename T>
Tensor<T> mean_axis(const Tensor<T>& x, std::ptrdiff_t axis, bool keepdim = false) {
  const T n = static_cast<T>(x.extent(axis));
  return scale(sum_axis(x, axis, keepdim), T(1) / n);
}

/// Softmax over the last axis, evaluated with max subtraction.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  if (x.rank() == 0) throw DimensionError("softmax needs rank >= 1");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.size() / n;
  const auto xv = x.data();
  std::vector<T> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = xv.data() + r * n;
    T* dst = out.data() + r * n;
    const T mx = *std::max_element(src, src + n);
    T total = T(0);
    for (std::size_t j = 0; j < n; ++j) total += dst[j] = std::exp(src[j] - mx);
    for (std::size_t j = 0; j < n; ++j) dst[j] /= total;
  }
  Tensor<T> result(x.shape(), std::move(out));
  std::weak_ptr<detail::Node<T>> weak_y = result.node();
  detail::record_op(result, {&x}, [xn = x.node(), weak_y, n, rows](std::span<const T> g) {
    auto y = weak_y.lock();
    auto* gx = detail::grad_sink<T>(xn);
    if (!gx || !y) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* yr = y->data.data() + r * n;
      const T* gr = g.data() + r * n;
      T dot = T(0);
      for (std::size_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
      for (std::size_t j = 0; j < n; ++j) (*gx)[r * n + j] += yr[j] * (gr[j] - dot);
    }
  });
  return result;
}

// ---------------------------------------------------------------------------
// Linear algebra

/// a[..., m, k] x b[k, n] (shared right operand) or a[..., m, k] x b[..., k, n]
/// (batched, identical leading extents).
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2) {
    throw DimensionError("matmul needs rank >= 2 operands, got " + to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  const std::size_t m = a.extent(-2), k = a.extent(-1);
  const std::size_t kb = b.extent(-2), n = b.extent(-1);
  const bool shared = b.rank() == 2;
  bool ok = k == kb;
  if (!shared) ok = ok && b.rank() == a.rank() && std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin());
  if (!ok) throw DimensionError("matmul shape mismatch: " + to_string(a.shape()) + " x " + to_string(b.shape()));

  const std::size_t batch = a.size() / (m * k);
  Shape out_shape(a.shape().begin(), a.shape().end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<T> out(batch * m * n, T(0));
  const T* ad = a.data().data();
  const T* bd = b.data().data();
  const std::size_t b_step = shared ? 0 : k * n;
  for (std::size_t t = 0; t < batch; ++t) detail::gemm_nn(ad + t * m * k, bd + t * b_step, out.data() + t * m * n, m, k, n);

  Tensor<T> result(std::move(out_shape), std::move(out));
  detail::record_op(result, {&a, &b}, [an = a.node(), bn = b.node(), batch, m, k, n, b_step](std::span<const T> g) {
    if (auto* ga = detail::grad_sink<T>(an))
      for (std::size_t t = 0; t < batch; ++t)
        detail::gemm_nt(g.data() + t * m * n, bn->data.data() + t * b_step, ga->data() + t * m * k, m, n, k);
    if (auto* gb = detail::grad_sink<T>(bn))
      for (std::size_t t = 0; t < batch; ++t)
        detail::gemm_tn(an->data.data() + t * m * k, g.data() + t * m * n, gb->data() + t * b_step, m, k, n);
  });
  return result;
}

// ---------------------------------------------------------------------------
// Shape manipulation

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (numel(shape) != x.size()) throw DimensionError("cannot reshape " + to_string(x.shape()) + " to " + to_string(shape));
  Tensor<T> result(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
  detail::record_op(result, {&x}, [xn = x.node()](std::span<const T> g) {
    if (auto* gx = detail::grad_sink<T>(xn))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
  });
  return result;
}

namespace detail {

// For each output flat index, the source flat index under `perm`.
inline std::vector<std::size_t> permutation_sources(const Shape& in, const std::vector<std::size_t>& perm) {
  const std::size_t r = in.size();
  std::vector<std::size_t> in_stride(r, 1);
  for (std::size_t i = r; i-- > 1;) in_stride[i - 1] = in_stride[i] * in[i];
  Shape out(r);
  std::vector<std::size_t> step(r);
  for (std::size_t i = 0; i < r; ++i) {
    out[i] = in[perm[i]];
    step[i] = in_stride[perm[i]];
  }
  const std::size_t n = numel(in);
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t s = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    src[flat] = s;
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      s += step[d];
      if (idx[d] < out[d]) break;
      s -= step[d] * idx[d];
      idx[d] = 0;
    }
  }
  return src;
}

}  // namespace detail

/// Output axis i is input axis perm[i].
template <typename T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
  const std::size_t r = x.rank();
  std::vector<bool> seen(r, false);
  bool valid = perm.size() == r;
  for (std::size_t i = 0; valid && i < r; ++i) {
    valid = perm[i] < r && !seen[perm[i]];
    if (valid) seen[perm[i]] = true;
  }
  if (!valid) throw DimensionError("invalid permutation for shape " + to_string(x.shape()));

  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.shape()[perm[i]];
  auto src = detail::permutation_sources(x.shape(), perm);
  const auto xv = x.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[src[i]];
  Tensor<T> result(std::move(out_shape), std::move(out));
  detail::record_op(result, {&x}, [xn = x.node(), src = std::move(src)](std::span<const T> g) {
    if (auto* gx = detail::grad_sink<T>(xn))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[src[i]] += g[i];
  });
  return result;
}

/// Swaps the last two axes.
template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.rank() < 2) throw DimensionError("transpose needs rank >= 2, got " + to_string(x.shape()));
  std::vector<std::size_t> perm(x.rank());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::swap(perm[perm.size() - 1], perm[perm.size() - 2]);
  return permute(x, perm);
}

/// Constant padding of one axis.
template <typename T>
Tensor<T> pad(const Tensor<T>& x, std::ptrdiff_t axis, std::size_t before, std::size_t after, T value = T(0)) {
  const std::size_t ax = detail::normalize_axis(axis, x.rank());
  const auto s = detail::split_at(x.shape(), ax);
  const std::size_t e_out = s.extent + before + after;
  Shape out_shape = x.shape();
  out_shape[ax] = e_out;
  std::vector<T> out(s.outer * e_out * s.inner, value);
  const auto xv = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(xv.data() + o * s.extent * s.inner, s.extent * s.inner, out.data() + (o * e_out + before) * s.inner);
  Tensor<T> result(std::move(out_shape), std::move(out));
  detail::record_op(result, {&x}, [xn = x.node(), s, e_out, before](std::span<const T> g) {
    auto* gx = detail::grad_sink<T>(xn);
    if (!gx) return;
    for (std::size_t o = 0; o < s.outer; ++o) {
      const T* src = g.data() + (o * e_out + before) * s.inner;
      T* dst = gx->data() + o * s.extent * s.inner;
      for (std::size_t i = 0; i < s.extent * s.inner; ++i) dst[i] += src[i];
    }
  });
  return result;
}

/// Elements [begin, end) along one axis.
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::ptrdiff_t axis, std::size_t begin, std::size_t end) {
  const std::size_t ax = detail::normalize_axis(axis, x.rank());
  const auto s = detail::split_at(x.shape(), ax);
  if (begin >= end || end > s.extent) {
    throw DimensionError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for shape " + to_string(x.shape()));
  }
  const std::size_t e_out = end - begin;
  Shape out_shape = x.shape();
  out_shape[ax] = e_out;
  std::vector<T> out(s.outer * e_out * s.inner);
  const auto xv = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(xv.data() + (o * s.extent + begin) * s.inner, e_out * s.inner, out.data() + o * e_out * s.inner);
  Tensor<T> result(std::move(out_shape), std::move(out));
  detail::record_op(result, {&x}, [xn = x.node(), s, e_out, begin](std::span<const T> g) {
    auto* gx = detail::grad_sink<T>(xn);
    if (!gx) return;
    for (std::size_t o = 0; o < s.outer; ++o) {
      const T* src = g.data() + o * e_out * s.inner;
      T* dst = gx->data() + (o * s.extent + begin) * s.inner;
      for (std::size_t i = 0; i < e_out * s.inner; ++i) dst[i] += src[i];
    }
  });
  return result;
}

/// Concatenation of two tensors along `axis`; all other extents must agree.
template <typename T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b, std::ptrdiff_t axis) {
  const std::size_t ax = detail::normalize_axis(axis, a.rank());
  bool ok = a.rank() == b.rank();
  for (std::size_t i = 0; ok && i < a.rank(); ++i) ok = i == ax || a.shape()[i] == b.shape()[i];
  if (!ok) throw DimensionError("concat shape mismatch: " + to_string(a.shape()) + " and " + to_string(b.shape()));
  const auto sa = detail::split_at(a.shape(), ax);
  const auto sb = detail::split_at(b.shape(), ax);
  const std::size_t ca = sa.extent * sa.inner, cb = sb.extent * sb.inner;
  Shape out_shape = a.shape();
  out_shape[ax] += b.shape()[ax];
  std::vector<T> out(a.size() + b.size());
  for (std::size_t o = 0; o < sa.outer; ++o) {
    std::copy_n(a.data().data() + o * ca, ca, out.data() + o * (ca + cb));
    std::copy_n(b.data().data() + o * cb, cb, out.data() + o * (ca + cb) + ca);
  }
  Tensor<T> result(std::move(out_shape), std::move(out));
  detail::record_op(result, {&a, &b}, [an = a.node(), bn = b.node(), outer = sa.outer, ca, cb](std::span<const T> g) {
    auto* ga = detail::grad_sink<T>(an);
    auto* gb = detail::grad_sink<T>(bn);
    for (std::size_t o = 0; o < outer; ++o) {
      const T* row = g.data() + o * (ca + cb);
      if (ga)
        for (std::size_t i = 0; i < ca; ++i) (*ga)[o * ca + i] += row[i];
      if (gb)
        for (std::size_t i = 0; i < cb; ++i) (*gb)[o * cb + i] += row[ca + i];
    }
  });
  return result;
}

// ---------------------------------------------------------------------------
// Convolution (channels-last)

struct ConvGeometry {
  std::size_t batch, height, width, channels;
  std::size_t kh, kw, stride, padding;
  std::size_t out_h, out_w;
};

namespace detail {

inline ConvGeometry conv_geometry(const Shape& x, std::size_t kh, std::size_t kw, std::size_t stride, std::size_t padding) {
  if (x.size() != 3 && x.size() != 4) throw DimensionError("convolution input must be [H,W,C] or [B,H,W,C], got " + to_string(x));
  if (kh == 0 || kw == 0 || stride == 0) throw DimensionError("convolution needs kernel >= 1 and stride >= 1");
  const std::size_t off = x.size() == 4 ? 1 : 0;
  ConvGeometry g{off ? x[0] : 1, x[off], x[off + 1], x[off + 2], kh, kw, stride, padding, 0, 0};
  const std::size_t ph = g.height + 2 * padding, pw = g.width + 2 * padding;
  if (ph < kh || pw < kw) {
    throw DimensionError("convolution output extent is non-positive for input " + to_string(x) + " and kernel " +
                         std::to_string(kh) + "x" + std::to_string(kw));
  }
  g.out_h = (ph - kh) / stride + 1;
  g.out_w = (pw - kw) / stride + 1;
  return g;
}

}  // namespace detail

/// Patch extraction: [B,H,W,C] -> [B*H'*W', kh*kw*C], columns ordered (ky, kx, c).
template <typename T>
Tensor<T> im2col(const Tensor<T>& x, std::size_t kh, std::size_t kw, std::size_t stride, std::size_t padding) {
  const ConvGeometry g = detail::conv_geometry(x.shape(), kh, kw, stride, padding);
  const std::size_t cols = kh * kw * g.channels;
  const std::size_t rows = g.batch * g.out_h * g.out_w;
  std::vector<T> out(rows * cols, T(0));
  const auto xv = x.data();

  // Visits (column-buffer offset, input offset) pairs for every in-bounds tap.
  auto for_each_tap = [g, cols](auto&& visit) {
    std::size_t row = 0;
    for (std::size_t b = 0; b < g.batch; ++b)
      for (std::size_t oy = 0; oy < g.out_h; ++oy)
        for (std::size_t ox = 0; ox < g.out_w; ++ox, ++row)
          for (std::size_t ky = 0; ky < g.kh; ++ky) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.padding);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.padding);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width)) continue;
              const std::size_t dst = row * cols + (ky * g.kw + kx) * g.channels;
              const std::size_t src = ((b * g.height + static_cast<std::size_t>(iy)) * g.width + static_cast<std::size_t>(ix)) * g.channels;
              visit(dst, src);
            }
          }
  };

  for_each_tap([&](std::size_t dst, std::size_t src) { std::copy_n(xv.data() + src, g.channels, out.data() + dst); });
  Tensor<T> result(Shape{rows, cols}, std::move(out));
  detail::record_op(result, {&x}, [xn = x.node(), for_each_tap, c = g.channels](std::span<const T> grad) {
    auto* gx = detail::grad_sink<T>(xn);
    if (!gx) return;
    for_each_tap([&](std::size_t dst, std::size_t src) {
      for (std::size_t i = 0; i < c; ++i) (*gx)[src + i] += grad[dst + i];
    });
  });
  return result;
}

/// Cross-correlation of x [H,W,Cin] or [B,H,W,Cin] with w [kh,kw,Cin,Cout],
/// lowered to im2col + matmul.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride, std::size_t padding) {
  if (w.rank() != 4) throw DimensionError("conv2d weight must be [kh,kw,Cin,Cout], got " + to_string(w.shape()));
  const std::size_t kh = w.shape()[0], kw = w.shape()[1], cin = w.shape()[2], cout = w.shape()[3];
  const ConvGeometry g = detail::conv_geometry(x.shape(), kh, kw, stride, padding);
  if (g.channels != cin) {
    throw DimensionError("conv2d channel mismatch: input " + to_string(x.shape()) + ", weight " + to_string(w.shape()));
  }
  Tensor<T> cols = (kh == 1 && kw == 1 && stride == 1 && padding == 0)
                       ? reshape(x, Shape{g.batch * g.height * g.width, cin})
                       : im2col(x, kh, kw, stride, padding);
  Tensor<T> y = matmul(cols, reshape(w, Shape{kh * kw * cin, cout}));
  if (x.rank() == 3) return reshape(y, Shape{g.out_h, g.out_w, cout});
  return reshape(y, Shape{g.batch, g.out_h, g.out_w, cout});
}

/// Per-channel convolution with w [kh,kw,C].
template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride, std::size_t padding) {
  if (w.rank() != 3) throw DimensionError("depthwise weight must be [kh,kw,C], got " + to_string(w.shape()));
  const std::size_t kh = w.shape()[0], kw = w.shape()[1], c = w.shape()[2];
  const ConvGeometry g = detail::conv_geometry(x.shape(), kh, kw, stride, padding);
  if (g.channels != c) {
    throw DimensionError("depthwise channel mismatch: input " + to_string(x.shape()) + ", weight " + to_string(w.shape()));
  }
  const std::size_t rows = g.batch * g.out_h * g.out_w;
  Tensor<T> cols = reshape(im2col(x, kh, kw, stride, padding), Shape{rows, kh * kw, c});
  Tensor<T> y = sum_axis(mul(cols, reshape(w, Shape{kh * kw, c})), 1);
  if (x.rank() == 3) return reshape(y, Shape{g.out_h, g.out_w, c});
  return reshape(y, Shape{g.batch, g.out_h, g.out_w, c});
}

/// Mean over spatial positions: [B,H,W,C] -> [B,C], [H,W,C] -> [C].
template <typename T>
Tensor<T> global_average_pool(const Tensor<T>& x) {
  if (x.rank() == 3) return mean_axis(reshape(x, Shape{x.shape()[0] * x.shape()[1], x.shape()[2]}), 0);
  if (x.rank() == 4) {
    const auto& s = x.shape();
    return mean_axis(reshape(x, Shape{s[0], s[1] * s[2], s[3]}), 1);
  }
  throw DimensionError("global_average_pool expects [H,W,C] or [B,H,W,C], got " + to_string(x.shape()));
}

}  // namespace fast
