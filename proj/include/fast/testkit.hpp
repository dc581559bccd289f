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

// Independent reference implementations used to check the library: central
// finite differences, naive loops, power iteration, rank enumeration. Nothing
// here calls the op or metric code it is used to verify.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fast/init.hpp"
#include "fast/tensor.hpp"

namespace fast::testkit {

/// Uniform entries in [lo, hi].
inline TensorD random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = lo + (hi - lo) * uniform01(rng);
  return TensorD(std::move(shape), std::move(v));
}

/// Entries in [lo, hi] with a random sign.
inline TensorD random_signed_away_from_zero(Shape shape, Rng& rng, double lo, double hi) {
  auto t = random_tensor(std::move(shape), rng, lo, hi);
  for (auto& x : t.mutable_data()) x = uniform01(rng) < 0.5 ? -x : x;
  return t;
}

// ---------------------------------------------------------------------------
// Finite differences

/// Central-difference gradient of `f` at the current values of `target`,
/// perturbing it in place. Only `indices` are probed (all when empty); the
/// result always has target.size() entries, zero where not probed.
inline std::vector<double> finite_diff_inplace(const std::function<double()>& f, TensorD& target, double step,
                                               const std::vector<std::size_t>& indices = {}) {
  NoGradGuard no_grad;
  auto data = target.mutable_data();
  std::vector<double> grad(data.size(), 0.0);
  auto probe = [&](std::size_t i) {
    const double saved = data[i];
    data[i] = saved + step;
    const double up = f();
    data[i] = saved - step;
    const double down = f();
    data[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) throw OracleError("objective is not finite at coordinate " + std::to_string(i));
    grad[i] = (up - down) / (2.0 * step);
  };
  if (indices.empty())
    for (std::size_t i = 0; i < data.size(); ++i) probe(i);
  else
    for (auto i : indices) probe(i);
  return grad;
}

/// (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate of x.
inline TensorD finite_diff_grad(const std::function<double(const TensorD&)>& f, const TensorD& x, double step = 1e-5) {
  TensorD work = x.detach();
  auto g = finite_diff_inplace([&] { return f(work); }, work, step);
  return TensorD(x.shape(), std::move(g));
}

struct GradCheckReport {
  std::string op;
  double max_rel_error = 0.0;
  std::optional<std::size_t> failing_index;
  double tolerance = 0.0;

  bool passed() const { return max_rel_error <= tolerance; }
};

/// Relative error per coordinate: |a_i - n_i| / max(|a|_inf, |n|_inf, 1e-12).
inline GradCheckReport compare_gradients(const std::string& op, const std::vector<double>& analytic,
                                         const std::vector<double>& numeric, double tolerance,
                                         const std::vector<std::size_t>& indices = {}) {
  GradCheckReport r{op, 0.0, std::nullopt, tolerance};
  std::vector<std::size_t> idx = indices;
  if (idx.empty()) {
    idx.resize(numeric.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  }
  double scale = 1e-12;
  for (auto i : idx) scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
  std::size_t worst = idx.empty() ? 0 : idx.front();
  for (auto i : idx) {
    double e = std::abs(analytic[i] - numeric[i]) / scale;
    if (!std::isfinite(e)) e = std::numeric_limits<double>::infinity();
    if (e > r.max_rel_error) {
      r.max_rel_error = e;
      worst = i;
    }
  }
  if (!r.passed()) r.failing_index = worst;
  return r;
}

// ---------------------------------------------------------------------------
// Lipschitz estimation

using VectorMap = std::function<std::vector<double>(const std::vector<double>&)>;
using PairSampler = std::function<std::pair<std::vector<double>, std::vector<double>>(Rng&)>;

inline double l2_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

/// max ||f(x) - f(y)|| / ||x - y|| over sampled pairs; pairs closer than 1e-8
/// are redrawn.
inline double empirical_lipschitz(const VectorMap& f, const PairSampler& sampler, std::size_t pairs, Rng& rng) {
  double best = 0.0;
  for (std::size_t p = 0; p < pairs; ++p) {
    auto [x, y] = sampler(rng);
    double dx = l2_distance(x, y);
    for (int retry = 0; dx < 1e-8 && retry < 100; ++retry) {
      std::tie(x, y) = sampler(rng);
      dx = l2_distance(x, y);
    }
    if (dx < 1e-8) throw OracleError("sampler keeps producing coincident pairs");
    best = std::max(best, l2_distance(f(x), f(y)) / dx);
  }
  return best;
}

/// Gaussian pairs in `dim` dimensions with entries scaled by `magnitude`.
inline PairSampler gaussian_pairs(std::size_t dim, double magnitude = 1.0) {
  return [dim, magnitude](Rng& rng) {
    std::vector<double> x(dim), y(dim);
    for (auto& v : x) v = magnitude * standard_normal(rng);
    for (auto& v : y) v = magnitude * standard_normal(rng);
    return std::make_pair(x, y);
  };
}

/// Half Gaussian pairs, half pairs whose difference is +-1 on one or two random
/// coordinates of a Gaussian base point.
inline PairSampler mixed_sparse_pairs(std::size_t dim, double magnitude = 1.0) {
  return [dim, magnitude](Rng& rng) {
    std::vector<double> x(dim), y(dim);
    for (auto& v : x) v = magnitude * standard_normal(rng);
    if (rng() % 2) {
      for (auto& v : y) v = magnitude * standard_normal(rng);
    } else {
      y = x;
      const std::size_t k = 1 + rng() % 2;
      for (std::size_t t = 0; t < k; ++t) y[rng() % dim] += rng() % 2 ? magnitude : -magnitude;
    }
    return std::make_pair(x, y);
  };
}

/// Largest singular value of a row-major rows x cols matrix, by power
/// iteration on M^T M until the estimate changes by less than tol (relative).
inline double spectral_norm(const std::vector<double>& m, std::size_t rows, std::size_t cols, double tol = 1e-10,
                            std::size_t max_iterations = 10000) {
  if (m.size() != rows * cols || rows == 0 || cols == 0) throw OracleError("spectral_norm: bad matrix extents");
  Rng rng(0x5EED);
  std::vector<double> v(cols), mv(rows), w(cols);
  for (auto& x : v) x = 1.0 + 0.1 * standard_normal(rng);
  double estimate = 0.0;
  for (std::size_t it = 0; it < max_iterations; ++it) {
    double norm = 0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) return 0.0;
    for (auto& x : v) x /= norm;
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < cols; ++c) s += m[r * cols + c] * v[c];
      mv[r] = s;
    }
    std::fill(w.begin(), w.end(), 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) w[c] += m[r * cols + c] * mv[r];
    double lambda = 0;
    for (std::size_t c = 0; c < cols; ++c) lambda += v[c] * w[c];
    const double next = std::sqrt(std::max(lambda, 0.0));
    if (it > 0 && std::abs(next - estimate) <= tol * std::max(next, 1e-300)) return next;
    estimate = next;
    v = w;
  }
  throw OracleError("spectral_norm did not converge in " + std::to_string(max_iterations) + " iterations");
}

/// Row-major Jacobian [out x in] of `f` at `x` by central differences.
inline std::vector<double> numeric_jacobian(const VectorMap& f, const std::vector<double>& x, std::size_t& out_dim,
                                            double step = 1e-6) {
  const auto y0 = f(x);
  out_dim = y0.size();
  std::vector<double> jac(out_dim * x.size());
  std::vector<double> xp = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    xp[i] = x[i] + step;
    const auto up = f(xp);
    xp[i] = x[i] - step;
    const auto down = f(xp);
    xp[i] = x[i];
    for (std::size_t o = 0; o < out_dim; ++o) jac[o * x.size() + i] = (up[o] - down[o]) / (2 * step);
  }
  return jac;
}

// ---------------------------------------------------------------------------
// Naive references

/// Direct sliding-window cross-correlation. x [H][W][Cin], w [kh][kw][Cin][Cout].
inline std::vector<double> naive_conv2d(const std::vector<double>& x, std::size_t h, std::size_t w, std::size_t cin,
                                        const std::vector<double>& k, std::size_t kh, std::size_t kw, std::size_t cout,
                                        std::size_t stride, std::size_t padding, std::size_t& out_h, std::size_t& out_w) {
  out_h = (h + 2 * padding - kh) / stride + 1;
  out_w = (w + 2 * padding - kw) / stride + 1;
  std::vector<double> y(out_h * out_w * cout, 0.0);
  for (std::size_t oy = 0; oy < out_h; ++oy)
    for (std::size_t ox = 0; ox < out_w; ++ox)
      for (std::size_t co = 0; co < cout; ++co) {
        double acc = 0;
        for (std::size_t dy = 0; dy < kh; ++dy)
          for (std::size_t dx = 0; dx < kw; ++dx) {
            const long iy = static_cast<long>(oy * stride + dy) - static_cast<long>(padding);
            const long ix = static_cast<long>(ox * stride + dx) - static_cast<long>(padding);
            if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
            for (std::size_t ci = 0; ci < cin; ++ci)
              acc += x[(static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)) * cin + ci] *
                     k[((dy * kw + dx) * cin + ci) * cout + co];
          }
        y[(oy * out_w + ox) * cout + co] = acc;
      }
  return y;
}

/// F1 from an explicit 2x2 confusion table.
inline double f1_reference(const std::vector<int>& preds, const std::vector<int>& labels) {
  double table[2][2] = {{0, 0}, {0, 0}};  // [label][pred]
  for (std::size_t i = 0; i < preds.size(); ++i) table[labels[i] == 1][preds[i] == 1] += 1;
  const double tp = table[1][1], fp = table[0][1], fn = table[1][0];
  if (tp == 0) return 0.0;
  const double p = tp / (tp + fp), r = tp / (tp + fn);
  return 2 * p * r / (p + r);
}

/// Average precision by rank enumeration: the rank of sample i counts every j
/// scored higher, or scored equal and listed earlier. No sorting.
inline double average_precision_reference(const std::vector<double>& scores, const std::vector<int>& targets) {
  const std::size_t n = scores.size();
  auto rank_of = [&](std::size_t i) {
    std::size_t r = 1;
    for (std::size_t j = 0; j < n; ++j)
      if (scores[j] > scores[i] || (scores[j] == scores[i] && j < i)) ++r;
    return r;
  };
  double total = 0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] != 1) continue;
    ++positives;
    const std::size_t ri = rank_of(i);
    std::size_t hits = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (targets[j] == 1 && rank_of(j) <= ri) ++hits;
    total += static_cast<double>(hits) / static_cast<double>(ri);
  }
  return positives ? total / static_cast<double>(positives) : std::nan("");
}

inline double map_reference(const std::vector<double>& scores, const std::vector<int>& targets, std::size_t classes) {
  const std::size_t b = scores.size() / classes;
  double total = 0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    std::vector<double> s;
    std::vector<int> t;
    for (std::size_t i = 0; i < b; ++i) {
      s.push_back(scores[i * classes + c]);
      t.push_back(targets[i * classes + c]);
    }
    const double ap = average_precision_reference(s, t);
    if (!std::isnan(ap)) {
      total += ap;
      ++counted;
    }
  }
  return total / static_cast<double>(counted);
}

/// Mean of -[t log s + (1 - t) log(1 - s)] with s = 1 / (1 + e^-z) and
/// 1 - s evaluated as 1 / (1 + e^z).
inline double bce_reference(const std::vector<double>& logits, const std::vector<double>& targets) {
  double total = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double s = 1.0 / (1.0 + std::exp(-logits[i]));
    const double one_minus_s = 1.0 / (1.0 + std::exp(logits[i]));
    total += -(targets[i] * std::log(s) + (1.0 - targets[i]) * std::log(one_minus_s));
  }
  return total / static_cast<double>(logits.size());
}

}  // namespace fast::testkit
