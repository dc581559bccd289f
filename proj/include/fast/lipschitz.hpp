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

// Lipschitz-aware transformer components.
//
//   CenterNorm   y = gamma * D/(D-1) * (x - mean(x)) + beta
//   SCSA         nu * softmax(tau * Q K^T) V with every q/k/v row scaled to
//                norm < 1 by  r / sqrt(|r|^2 + eps)
//   WRS          x + alpha * f(x), with the branch optionally dropped per sample
//   Block        CN(x + DropPath(alpha * f(x))), applied once with f = SCSA and
//                once with f = MLP
//
// The baseline variant (LayerNorm, scaled dot-product attention, unweighted
// residuals) exists for ablation runs and bound-contrast checks.

#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "fast/init.hpp"
#include "fast/layers.hpp"
#include "fast/ops.hpp"

namespace fast {

enum class BlockVariant { lipschitz, baseline };

inline const char* to_string(BlockVariant v) { return v == BlockVariant::lipschitz ? "lips" : "base"; }

// ---------------------------------------------------------------------------
// CenterNorm

template <typename T>
struct CenterNormParams {
  Tensor<T> gamma;  // [D], init 1
  Tensor<T> beta;   // [D], init 0

  static CenterNormParams create(std::size_t dim) {
    if (dim < 2) throw ConfigError("CenterNorm needs D >= 2, got D = " + std::to_string(dim));
    return {constant_parameter<T>({dim}, 1.0), constant_parameter<T>({dim}, 0.0)};
  }

  std::size_t dim() const { return gamma.size(); }

  void collect(const std::string& prefix, ParameterList<T>& out) const {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
  }
};

/// Mean-only normalisation over the last axis. Lipschitz with constant
/// D/(D-1) * max|gamma|.
template <typename T>
Tensor<T> center_norm(const Tensor<T>& x, const CenterNormParams<T>& p) {
  const std::size_t d = p.dim();
  if (d < 2) throw ConfigError("CenterNorm needs D >= 2, got D = " + std::to_string(d));
  if (x.rank() == 0 || x.shape().back() != d) {
    throw DimensionError("center_norm: last extent of " + to_string(x.shape()) + " must equal D = " + std::to_string(d));
  }
  const T factor = static_cast<T>(d) / static_cast<T>(d - 1);
  Tensor<T> centered = sub(x, mean_axis(x, -1, true));
  return add(mul(scale(centered, factor), p.gamma), p.beta);
}

/// Variance normalisation over the last axis (ablation baseline).
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const CenterNormParams<T>& p, T eps = T(1e-5)) {
  if (x.rank() == 0 || x.shape().back() != p.dim()) {
    throw DimensionError("layer_norm: last extent of " + to_string(x.shape()) + " must equal D = " + std::to_string(p.dim()));
  }
  Tensor<T> centered = sub(x, mean_axis(x, -1, true));
  Tensor<T> stddev = sqrt_eps(mean_axis(mul(centered, centered), -1, true), eps);
  return add(mul(div(centered, stddev), p.gamma), p.beta);
}

// ---------------------------------------------------------------------------
// Attention

template <typename T>
struct ScsaParams {
  Tensor<T> wq, wk, wv;  // [D, D]
  Tensor<T> log_tau;     // [heads]; tau = exp(log_tau) stays positive
  T nu = T(1);
  T eps = T(1e-6);
  std::size_t heads = 1;

  static ScsaParams create(std::size_t dim, std::size_t heads, Initializer& init, double tau_init = 5.0, double nu = 1.0,
                           double eps = 1e-6) {
    if (heads == 0 || dim % heads != 0) {
      throw ConfigError("attention heads (" + std::to_string(heads) + ") must divide D = " + std::to_string(dim));
    }
    if (!(eps > 0.0)) throw ConfigError("attention eps must be positive");
    ScsaParams p;
    p.wq = make_parameter<T>({dim, dim}, init.truncated_normal(dim * dim, 0.02));
    p.wk = make_parameter<T>({dim, dim}, init.truncated_normal(dim * dim, 0.02));
    p.wv = make_parameter<T>({dim, dim}, init.truncated_normal(dim * dim, 0.02));
    p.log_tau = constant_parameter<T>({heads}, std::log(tau_init));
    p.nu = static_cast<T>(nu);
    p.eps = static_cast<T>(eps);
    p.heads = heads;
    return p;
  }

  std::size_t dim() const { return wq.shape()[0]; }

  void collect(const std::string& prefix, ParameterList<T>& out, BlockVariant variant) const {
    out.push_back({prefix + ".wq", wq});
    out.push_back({prefix + ".wk", wk});
    out.push_back({prefix + ".wv", wv});
    if (variant == BlockVariant::lipschitz) out.push_back({prefix + ".log_tau", log_tau});
  }
};

/// Intermediates exposed for invariant checks. q/k/v are [G, heads, N, D/heads],
/// attention is [G, heads, N, N].
template <typename T>
struct AttentionTrace {
  Tensor<T> q, k, v, attention;
};

namespace detail {

// [G, N, D] -> [G, H, N, D/H]
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, std::size_t heads) {
  const auto& s = x.shape();
  return permute(reshape(x, Shape{s[0], s[1], heads, s[2] / heads}), {0, 2, 1, 3});
}

// [G, H, N, Dh] -> [G, N, H*Dh]
template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x) {
  const auto& s = x.shape();
  return reshape(permute(x, {0, 2, 1, 3}), Shape{s[0], s[2], s[1] * s[3]});
}

template <typename T>
Tensor<T> as_sequences(const Tensor<T>& x, std::size_t dim, const char* op) {
  if (x.rank() < 2 || x.shape().back() != dim) {
    throw DimensionError(std::string(op) + ": input " + to_string(x.shape()) + " must be [..., N, " + std::to_string(dim) + "]");
  }
  const std::size_t n = x.extent(-2);
  return reshape(x, Shape{x.size() / (n * dim), n, dim});
}

}  // namespace detail

/// Row-wise r / sqrt(|r|^2 + eps) over the last axis, shrunk by (d + 4)
/// machine epsilons so rounded rows stay strictly inside the unit ball even
/// when eps is negligible next to |r|^2.
template <typename T>
Tensor<T> normalize_rows(const Tensor<T>& x, T eps) {
  const T shrink = T(1) - static_cast<T>(x.extent(-1) + 4) * std::numeric_limits<T>::epsilon();
  return scale(div(x, sqrt_eps(sum_axis(mul(x, x), -1, true), eps)), shrink);
}

/// Scaled cosine similarity attention over x [N, D] or [..., N, D].
///
/// Normalisation is applied per head, and the concatenated head outputs are
/// scaled by nu / sqrt(heads), so every output row has norm at most nu for any
/// input. With one head this is exactly nu * P V.
template <typename T>
Tensor<T> scsa(const Tensor<T>& x, const ScsaParams<T>& p, AttentionTrace<T>* trace = nullptr) {
  const std::size_t d = p.dim();
  Tensor<T> xs = detail::as_sequences(x, d, "scsa");
  const std::size_t h = p.heads;

  Tensor<T> q = normalize_rows(detail::split_heads(matmul(xs, p.wq), h), p.eps);
  Tensor<T> k = normalize_rows(detail::split_heads(matmul(xs, p.wk), h), p.eps);
  Tensor<T> v = normalize_rows(detail::split_heads(matmul(xs, p.wv), h), p.eps);

  Tensor<T> tau = reshape(exp(p.log_tau), Shape{h, 1, 1});
  Tensor<T> attn = softmax(mul(matmul(q, transpose(k)), tau));
  Tensor<T> heads_out = scale(matmul(attn, v), p.nu / std::sqrt(static_cast<T>(h)));
  if (trace) *trace = {q, k, v, attn};
  return reshape(detail::merge_heads(heads_out), x.shape());
}

/// softmax(Q K^T / sqrt(d_head)) V with unnormalised projections.
template <typename T>
Tensor<T> dot_product_attention(const Tensor<T>& x, const ScsaParams<T>& p, AttentionTrace<T>* trace = nullptr) {
  const std::size_t d = p.dim();
  Tensor<T> xs = detail::as_sequences(x, d, "dot_product_attention");
  const std::size_t h = p.heads;

  Tensor<T> q = detail::split_heads(matmul(xs, p.wq), h);
  Tensor<T> k = detail::split_heads(matmul(xs, p.wk), h);
  Tensor<T> v = detail::split_heads(matmul(xs, p.wv), h);
  const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(d / h));
  Tensor<T> attn = softmax(scale(matmul(q, transpose(k)), inv_sqrt));
  if (trace) *trace = {q, k, v, attn};
  return reshape(detail::merge_heads(matmul(attn, v)), x.shape());
}

// ---------------------------------------------------------------------------
// Residual paths

/// Stochastic depth. In training, each leading-axis sample keeps its branch
/// with probability 1 - p and is rescaled by 1 / (1 - p). Evaluation, and
/// p == 0, return the branch untouched and never draw from `rng`.
template <typename T>
Tensor<T> drop_path(const Tensor<T>& branch, double prob, bool training, Rng* rng) {
  if (!(prob >= 0.0 && prob < 1.0)) throw ConfigError("drop path probability must lie in [0, 1)");
  if (!training || prob == 0.0) return branch;
  if (!rng) throw UsageError("drop_path in training mode needs an rng");
  const std::size_t samples = branch.rank() >= 2 ? branch.shape()[0] : 1;
  Shape mask_shape(branch.rank() >= 2 ? branch.rank() : 1, 1);
  mask_shape[0] = samples;
  std::vector<T> mask(samples);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - prob));
  for (auto& m : mask) m = uniform01(*rng) < prob ? T(0) : keep_scale;
  return mul(branch, Tensor<T>(std::move(mask_shape), std::move(mask)));
}

template <typename T>
struct WrsParams {
  Tensor<T> alpha;  // [D]
  double droppath_prob = 0.0;

  static WrsParams create(std::size_t dim, double alpha_init, double droppath_prob) {
    if (!(droppath_prob >= 0.0 && droppath_prob < 1.0)) throw ConfigError("drop path probability must lie in [0, 1)");
    return {constant_parameter<T>({dim}, alpha_init), droppath_prob};
  }

  void collect(const std::string& prefix, ParameterList<T>& out) const { out.push_back({prefix + ".alpha", alpha}); }
};

/// x + DropPath(alpha * f_out).
template <typename T>
Tensor<T> weighted_residual(const Tensor<T>& x, const Tensor<T>& f_out, const WrsParams<T>& p, bool training, Rng* rng) {
  if (x.shape() != f_out.shape()) {
    throw DimensionError("weighted_residual: shapes " + to_string(x.shape()) + " and " + to_string(f_out.shape()) + " differ");
  }
  return add(x, drop_path(mul(f_out, p.alpha), p.droppath_prob, training, rng));
}

// ---------------------------------------------------------------------------
// Transformer block

template <typename T>
struct TransformerBlock {
  BlockVariant variant = BlockVariant::lipschitz;
  ScsaParams<T> attention;
  Linear<T> fc1, fc2;  // D -> rD -> D, SiLU between
  CenterNormParams<T> norm1, norm2;
  WrsParams<T> residual1, residual2;

  struct Options {
    std::size_t heads = 4;
    std::size_t mlp_ratio = 2;
    double alpha_init = 0.1;
    double tau_init = 5.0;
    double nu = 1.0;
    double eps = 1e-6;
    double droppath_prob = 0.0;
    BlockVariant variant = BlockVariant::lipschitz;
  };

  static TransformerBlock create(std::size_t dim, const Options& o, Initializer& init) {
    TransformerBlock b;
    b.variant = o.variant;
    b.attention = ScsaParams<T>::create(dim, o.heads, init, o.tau_init, o.nu, o.eps);
    b.fc1 = Linear<T>::truncated_normal(dim, dim * o.mlp_ratio, init);
    b.fc2 = Linear<T>::truncated_normal(dim * o.mlp_ratio, dim, init);
    b.norm1 = CenterNormParams<T>::create(dim);
    b.norm2 = CenterNormParams<T>::create(dim);
    const double alpha = o.variant == BlockVariant::lipschitz ? o.alpha_init : 1.0;
    b.residual1 = WrsParams<T>::create(dim, alpha, o.droppath_prob);
    b.residual2 = WrsParams<T>::create(dim, alpha, o.droppath_prob);
    return b;
  }

  std::size_t dim() const { return attention.dim(); }

  Tensor<T> mlp(const Tensor<T>& x) const { return fc2(silu(fc1(x))); }

  Tensor<T> forward(const Tensor<T>& x, bool training, Rng* rng) const {
    if (variant == BlockVariant::baseline) {
      Tensor<T> y = layer_norm(add(x, drop_path(dot_product_attention(x, attention), residual1.droppath_prob, training, rng)), norm1);
      return layer_norm(add(y, drop_path(mlp(y), residual2.droppath_prob, training, rng)), norm2);
    }
    Tensor<T> y = center_norm(weighted_residual(x, scsa(x, attention), residual1, training, rng), norm1);
    return center_norm(weighted_residual(y, mlp(y), residual2, training, rng), norm2);
  }

  void collect(const std::string& prefix, ParameterList<T>& out) const {
    attention.collect(prefix + ".attention", out, variant);
    fc1.collect(prefix + ".mlp.fc1", out);
    fc2.collect(prefix + ".mlp.fc2", out);
    norm1.collect(prefix + ".norm1", out);
    norm2.collect(prefix + ".norm2", out);
    if (variant == BlockVariant::lipschitz) {
      residual1.collect(prefix + ".residual1", out);
      residual2.collect(prefix + ".residual2", out);
    }
  }
};

/// y = CN1(WRS1(x, SCSA(x))); out = CN2(WRS2(y, MLP(y))).
template <typename T>
Tensor<T> lipschitz_block(const Tensor<T>& x, const TransformerBlock<T>& block, bool training, Rng* rng) {
  return block.forward(x, training, rng);
}

}  // namespace fast
