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
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "fast/config.hpp"
#include "fast/layers.hpp"
#include "fast/lipschitz.hpp"
#include "fast/mobilevit.hpp"

namespace fast {

/// Settings not covered by ModelConfig.
struct BuildOptions {
  std::uint64_t seed = 0;
  BlockVariant variant = BlockVariant::lipschitz;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 2;
  double alpha_init = 0.1;
  double tau_init = 5.0;
  double nu = 1.0;
  double eps = 1e-6;
  double droppath_max = 0.1;  // linear ramp from 0 at the first block
  std::size_t head_hidden = 256;
};

/// One step of the trunk.
struct StagePlanEntry {
  enum class Kind { inverted_residual, fast_block };
  Kind kind;
  std::string name;
  std::size_t in_channels;
  std::size_t out_channels;
  std::size_t stride = 1;
  std::size_t hidden_dim = 0;  // fast blocks only
  std::size_t depth = 0;       // fast blocks only
};

/// Maps the 11 channel waypoints onto the trunk:
///   stem 3x3/2 (1 -> c0)
///   stage1  MV2(c0 -> c1, s1)
///   stage2  MV2(c1 -> c2, s2), MV2(c2 -> c3, s1)
///   stage3  MV2(c3 -> c4, s2), Fast(c4 -> c5, d1, n1)
///   stage4  MV2(c5 -> c6, s2), Fast(c6 -> c7, d2, n2)
///   stage5  MV2(c7 -> c8, s2), Fast(c8 -> c9, d3, n3)
///   final pointwise c9 -> c10
inline std::vector<StagePlanEntry> stage_plan(const ModelConfig& cfg) {
  using K = StagePlanEntry::Kind;
  const auto& c = cfg.channels;
  const auto& d = cfg.hidden_dims;
  const auto& n = cfg.depths;
  return {
      {K::inverted_residual, "stage1.mv2", c[0], c[1], 1},
      {K::inverted_residual, "stage2.mv2_0", c[1], c[2], 2},
      {K::inverted_residual, "stage2.mv2_1", c[2], c[3], 1},
      {K::inverted_residual, "stage3.mv2", c[3], c[4], 2},
      {K::fast_block, "stage3.fast", c[4], c[5], 1, d[0], n[0]},
      {K::inverted_residual, "stage4.mv2", c[5], c[6], 2},
      {K::fast_block, "stage4.fast", c[6], c[7], 1, d[1], n[1]},
      {K::inverted_residual, "stage5.mv2", c[7], c[8], 2},
      {K::fast_block, "stage5.fast", c[8], c[9], 1, d[2], n[2]},
  };
}

struct LayerSummary {
  std::string name;
  std::size_t parameters;
};

template <typename T>
class FastModel {
 public:
  using TrunkLayer = std::variant<InvertedResidual<T>, FastBlock<T>>;

  static FastModel build(const ModelConfig& cfg, const BuildOptions& opts = {}) {
    cfg.validate();
    for (auto dim : cfg.hidden_dims) {
      if (opts.heads == 0 || dim % opts.heads != 0) {
        throw ConfigError("invalid model config: hidden_dims entry " + std::to_string(dim) + " is not divisible by " +
                          std::to_string(opts.heads) + " heads");
      }
    }
    FastModel m;
    m.config_ = cfg;
    m.options_ = opts;
    Initializer init(opts.seed);

    const auto plan = stage_plan(cfg);
    std::size_t total_blocks = 0;
    for (const auto& e : plan) total_blocks += e.depth;
    std::size_t block_index = 0;
    auto next_rate = [&] {
      const double r = total_blocks > 1 ? opts.droppath_max * static_cast<double>(block_index) / static_cast<double>(total_blocks - 1) : 0.0;
      ++block_index;
      return r;
    };

    m.stem_ = Conv2dLayer<T>::create(cfg.kernel, 1, cfg.channels[0], 2, true, init);
    for (const auto& e : plan) {
      if (e.kind == StagePlanEntry::Kind::inverted_residual) {
        m.trunk_.push_back({e.name, InvertedResidual<T>::create(e.in_channels, e.out_channels, e.stride, cfg.expansion, cfg.kernel, init)});
        continue;
      }
      typename FastBlock<T>::Options fo;
      fo.kernel = cfg.kernel;
      fo.patch = {cfg.patch_size[0], cfg.patch_size[1]};
      fo.block.heads = opts.heads;
      fo.block.mlp_ratio = opts.mlp_ratio;
      fo.block.alpha_init = opts.alpha_init;
      fo.block.tau_init = opts.tau_init;
      fo.block.nu = opts.nu;
      fo.block.eps = opts.eps;
      fo.block.variant = opts.variant;
      for (std::size_t i = 0; i < e.depth; ++i) fo.droppath.push_back(next_rate());
      m.trunk_.push_back({e.name, FastBlock<T>::create(e.in_channels, e.out_channels, e.hidden_dim, e.depth, fo, init)});
    }
    m.final_conv_ = Conv2dLayer<T>::create(1, cfg.channels[9], cfg.channels[10], 1, true, init);
    m.fc1_ = Linear<T>::kaiming(cfg.channels[10], opts.head_hidden, init);
    m.fc2_ = Linear<T>::kaiming(opts.head_hidden, cfg.num_classes, init);
    return m;
  }

  /// x [B, H, W, 1] -> raw logits [B, num_classes].
  Tensor<T> forward(const Tensor<T>& x, bool training = false, Rng* rng = nullptr) const {
    const auto& s = x.shape();
    if (x.rank() != 4 || s[1] != config_.image_size[0] || s[2] != config_.image_size[1] || s[3] != 1) {
      throw DimensionError("model input must be [B, " + std::to_string(config_.image_size[0]) + ", " +
                           std::to_string(config_.image_size[1]) + ", 1], got " + to_string(s));
    }
    Tensor<T> h = stem_(x);
    for (const auto& layer : trunk_) {
      h = std::visit(
          [&](const auto& l) {
            if constexpr (std::is_same_v<std::decay_t<decltype(l)>, InvertedResidual<T>>)
              return l.forward(h);
            else
              return l.forward(h, training, rng);
          },
          layer.layer);
    }
    h = global_average_pool(final_conv_(h));
    return fc2_(silu(fc1_(h)));
  }

  ParameterList<T> parameters() const {
    ParameterList<T> out;
    stem_.collect("stem", out);
    for (const auto& layer : trunk_) std::visit([&](const auto& l) { l.collect(layer.name, out); }, layer.layer);
    final_conv_.collect("final_conv", out);
    fc1_.collect("head.fc1", out);
    fc2_.collect("head.fc2", out);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor.size();
    return n;
  }

  /// Parameter totals per top-level layer, in forward order.
  std::vector<LayerSummary> layer_summary() const {
    std::vector<LayerSummary> rows;
    auto add_layer = [&](const std::string& name, auto&& collect) {
      ParameterList<T> list;
      collect(list);
      std::size_t n = 0;
      for (const auto& p : list) n += p.tensor.size();
      rows.push_back({name, n});
    };
    add_layer("stem", [&](auto& l) { stem_.collect("stem", l); });
    for (const auto& layer : trunk_)
      add_layer(layer.name, [&](auto& l) { std::visit([&](const auto& v) { v.collect(layer.name, l); }, layer.layer); });
    add_layer("final_conv", [&](auto& l) { final_conv_.collect("final_conv", l); });
    add_layer("head.fc1", [&](auto& l) { fc1_.collect("head.fc1", l); });
    add_layer("head.fc2", [&](auto& l) { fc2_.collect("head.fc2", l); });
    return rows;
  }

  const ModelConfig& config() const { return config_; }
  const BuildOptions& options() const { return options_; }

  void zero_grad() const {
    for (auto& p : parameters()) p.tensor.zero_grad();
  }

 private:
  struct NamedLayer {
    std::string name;
    TrunkLayer layer;
  };

  ModelConfig config_;
  BuildOptions options_;
  Conv2dLayer<T> stem_;
  std::vector<NamedLayer> trunk_;
  Conv2dLayer<T> final_conv_;
  Linear<T> fc1_, fc2_;
};

}  // namespace fast
