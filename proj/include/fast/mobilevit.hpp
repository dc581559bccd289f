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

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "fast/layers.hpp"
#include "fast/lipschitz.hpp"
#include "fast/ops.hpp"

namespace fast {

/// Patch extent: `w` pixels wide, `h` pixels tall.
struct PatchSize {
  std::size_t w = 2;
  std::size_t h = 2;
};

/// MobileNetV2 block: pointwise expand, depthwise 3x3 (strided), pointwise
/// project. The shortcut is used iff stride == 1 and Cin == Cout.
template <typename T>
struct InvertedResidual {
  Conv2dLayer<T> expand;
  DepthwiseConvLayer<T> depthwise;
  Conv2dLayer<T> project;
  bool use_residual = false;

  static InvertedResidual create(std::size_t cin, std::size_t cout, std::size_t stride, std::size_t expansion, std::size_t kernel,
                                 Initializer& init) {
    if (stride != 1 && stride != 2) throw ConfigError("inverted residual stride must be 1 or 2");
    if (expansion == 0) throw ConfigError("expansion ratio must be positive");
    const std::size_t hidden = cin * expansion;
    InvertedResidual b;
    b.expand = Conv2dLayer<T>::create(1, cin, hidden, 1, true, init);
    b.depthwise = DepthwiseConvLayer<T>::create(kernel, hidden, stride, true, init);
    b.project = Conv2dLayer<T>::create(1, hidden, cout, 1, false, init);
    b.use_residual = stride == 1 && cin == cout;
    return b;
  }

  Tensor<T> forward(const Tensor<T>& x) const {
    if (x.rank() < 3 || x.shape().back() != expand.in_channels()) {
      throw DimensionError("inverted_residual: input " + to_string(x.shape()) + " does not have " +
                           std::to_string(expand.in_channels()) + " channels");
    }
    Tensor<T> y = project(depthwise(expand(x)));
    return use_residual ? add(y, x) : y;
  }

  void collect(const std::string& prefix, ParameterList<T>& out) const {
    expand.collect(prefix + ".expand", out);
    depthwise.collect(prefix + ".depthwise", out);
    project.collect(prefix + ".project", out);
  }
};

template <typename T>
Tensor<T> inverted_residual(const Tensor<T>& x, const InvertedResidual<T>& p) {
  return p.forward(x);
}

/// [H,W,d] -> [P,N,d] (or batched [B,H,W,d] -> [B,P,N,d]) with P = w*h.
/// Element (p, n) is intra-patch pixel p (row-major) of patch n (row-major).
template <typename T>
Tensor<T> unfold(const Tensor<T>& x, PatchSize patch) {
  if (x.rank() != 3 && x.rank() != 4) throw DimensionError("unfold expects [H,W,d] or [B,H,W,d], got " + to_string(x.shape()));
  const bool batched = x.rank() == 4;
  const std::size_t b = batched ? x.shape()[0] : 1;
  const std::size_t H = x.extent(-3), W = x.extent(-2), d = x.extent(-1);
  if (patch.h == 0 || patch.w == 0 || H % patch.h != 0 || W % patch.w != 0) {
    throw DimensionError("unfold: patch " + std::to_string(patch.w) + "x" + std::to_string(patch.h) + " does not tile " +
                         to_string(x.shape()));
  }
  const std::size_t gh = H / patch.h, gw = W / patch.w;
  Tensor<T> t = reshape(x, Shape{b, gh, patch.h, gw, patch.w, d});
  t = permute(t, {0, 2, 4, 1, 3, 5});
  const std::size_t P = patch.h * patch.w, N = gh * gw;
  return batched ? reshape(t, Shape{b, P, N, d}) : reshape(t, Shape{P, N, d});
}

/// Exact inverse of unfold.
template <typename T>
Tensor<T> fold(const Tensor<T>& xu, PatchSize patch, std::size_t height, std::size_t width) {
  if (xu.rank() != 3 && xu.rank() != 4) throw DimensionError("fold expects [P,N,d] or [B,P,N,d], got " + to_string(xu.shape()));
  const bool batched = xu.rank() == 4;
  const std::size_t b = batched ? xu.shape()[0] : 1;
  const std::size_t P = xu.extent(-3), N = xu.extent(-2), d = xu.extent(-1);
  if (patch.h == 0 || patch.w == 0 || height % patch.h != 0 || width % patch.w != 0 || P != patch.h * patch.w ||
      N != (height / patch.h) * (width / patch.w)) {
    throw DimensionError("fold: " + to_string(xu.shape()) + " is inconsistent with output " + std::to_string(height) + "x" +
                         std::to_string(width) + " and patch " + std::to_string(patch.w) + "x" + std::to_string(patch.h));
  }
  const std::size_t gh = height / patch.h, gw = width / patch.w;
  Tensor<T> t = reshape(xu, Shape{b, patch.h, patch.w, gh, gw, d});
  t = permute(t, {0, 3, 1, 4, 2, 5});
  return batched ? reshape(t, Shape{b, height, width, d}) : reshape(t, Shape{height, width, d});
}

/// MobileViT-style block with a Lipschitz transformer stack.
///
///   x_L = lift(local(x))                  3x3 conv then pointwise C -> d
///   x_U = unfold(pad(x_L))                [B*P, N, d] sequences
///   x_G = transformer stack per position  (shared across all P positions)
///   x_F = crop(fold(x_G))
///   out = fuse(concat(x, project(x_F)))   pointwise 2C -> C_out
template <typename T>
struct FastBlock {
  Conv2dLayer<T> local;
  Conv2dLayer<T> lift;
  std::vector<TransformerBlock<T>> transformer;
  Conv2dLayer<T> project;
  Conv2dLayer<T> fuse;
  PatchSize patch;

  struct Options {
    std::size_t kernel = 3;
    PatchSize patch{};
    typename TransformerBlock<T>::Options block{};
    std::vector<double> droppath;  // one rate per transformer block
  };

  static FastBlock create(std::size_t channels, std::size_t out_channels, std::size_t hidden, std::size_t depth, const Options& o,
                          Initializer& init) {
    if (!o.droppath.empty() && o.droppath.size() != depth) throw ConfigError("one drop path rate is needed per transformer block");
    FastBlock b;
    b.local = Conv2dLayer<T>::create(o.kernel, channels, channels, 1, true, init);
    b.lift = Conv2dLayer<T>::create(1, channels, hidden, 1, false, init);
    for (std::size_t i = 0; i < depth; ++i) {
      auto bo = o.block;
      bo.droppath_prob = o.droppath.empty() ? 0.0 : o.droppath[i];
      b.transformer.push_back(TransformerBlock<T>::create(hidden, bo, init));
    }
    b.project = Conv2dLayer<T>::create(1, hidden, channels, 1, true, init);
    b.fuse = Conv2dLayer<T>::create(1, 2 * channels, out_channels, 1, true, init);
    b.patch = o.patch;
    return b;
  }

  Tensor<T> forward(const Tensor<T>& x, bool training, Rng* rng) const {
    if (x.rank() != 4 && x.rank() != 3) throw DimensionError("fast_block expects [H,W,C] or [B,H,W,C], got " + to_string(x.shape()));
    if (x.shape().back() != local.in_channels()) {
      throw DimensionError("fast_block: input " + to_string(x.shape()) + " does not have " + std::to_string(local.in_channels()) +
                           " channels");
    }
    const bool batched = x.rank() == 4;
    Tensor<T> xb = batched ? x : reshape(x, Shape{1, x.shape()[0], x.shape()[1], x.shape()[2]});
    const std::size_t B = xb.shape()[0], H = xb.shape()[1], W = xb.shape()[2];

    Tensor<T> xl = lift(local(xb));
    const std::size_t d = xl.shape()[3];
    const std::size_t Hp = (H + patch.h - 1) / patch.h * patch.h;
    const std::size_t Wp = (W + patch.w - 1) / patch.w * patch.w;
    if (Hp != H) xl = pad(xl, 1, 0, Hp - H);
    if (Wp != W) xl = pad(xl, 2, 0, Wp - W);

    Tensor<T> xu = unfold(xl, patch);
    const std::size_t P = xu.shape()[1], N = xu.shape()[2];
    Tensor<T> seq = reshape(xu, Shape{B * P, N, d});
    for (const auto& block : transformer) seq = block.forward(seq, training, rng);

    Tensor<T> xf = fold(reshape(seq, Shape{B, P, N, d}), patch, Hp, Wp);
    if (Hp != H) xf = slice(xf, 1, 0, H);
    if (Wp != W) xf = slice(xf, 2, 0, W);

    Tensor<T> out = fuse(concat(xb, project(xf), -1));
    return batched ? out : reshape(out, Shape{H, W, out.shape()[3]});
  }

  void collect(const std::string& prefix, ParameterList<T>& out) const {
    local.collect(prefix + ".local", out);
    lift.collect(prefix + ".lift", out);
    for (std::size_t i = 0; i < transformer.size(); ++i) transformer[i].collect(prefix + ".transformer." + std::to_string(i), out);
    project.collect(prefix + ".project", out);
    fuse.collect(prefix + ".fuse", out);
  }
};

template <typename T>
Tensor<T> fast_block(const Tensor<T>& x, const FastBlock<T>& p, bool training, Rng* rng) {
  return p.forward(x, training, rng);
}

}  // namespace fast
