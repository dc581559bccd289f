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

// Finite-difference gradient suites, grouped by library module. Each case
// draws fresh inputs per seed, projects the op output onto a random fixed
// direction to get a scalar, and compares tape gradients for every leaf
// against central differences (step 1e-5, float64).

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fast/lipschitz.hpp"
#include "fast/mobilevit.hpp"
#include "fast/model.hpp"
#include "fast/ops.hpp"
#include "fast/testkit.hpp"
#include "fast/training.hpp"

namespace fast::testkit {

inline constexpr double kPrimitiveTolerance = 1e-5;
inline constexpr double kBlockTolerance = 1e-4;
inline constexpr double kEndToEndTolerance = 1e-3;
inline constexpr double kFiniteDiffStep = 1e-5;

/// Projects build() onto a random direction and checks the gradient of every
/// leaf. At most `max_coords` coordinates per leaf are probed.
inline GradCheckReport check_leaves(const std::string& name, std::vector<TensorD> leaves, const std::function<TensorD()>& build,
                                    double tolerance, Rng& rng, std::size_t max_coords = 64) {
  for (auto& l : leaves) {
    l.set_requires_grad(true);
    l.zero_grad();
  }
  Tape<double>::active().clear();
  TensorD out = build();
  const TensorD direction = random_tensor(out.shape(), rng);
  auto objective = [&] {
    const TensorD y = build();
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * direction[i];
    return s;
  };
  backward(sum(mul(out, direction)));

  GradCheckReport worst{name, 0.0, std::nullopt, tolerance};
  for (auto& leaf : leaves) {
    std::vector<std::size_t> idx;
    if (leaf.size() > max_coords)
      for (std::size_t k = 0; k < max_coords; ++k) idx.push_back(static_cast<std::size_t>(rng() % leaf.size()));
    const auto analytic = leaf.grad();
    const auto numeric = finite_diff_inplace(objective, leaf, kFiniteDiffStep, idx);
    auto r = compare_gradients(name, analytic, numeric, tolerance, idx);
    if (r.max_rel_error >= worst.max_rel_error) worst = r;
  }
  worst.op = name;
  worst.tolerance = tolerance;
  for (auto& l : leaves) l.set_requires_grad(false);
  return worst;
}

struct GradCheckCase {
  std::string module;
  std::string name;
  double tolerance;
  std::function<GradCheckReport(std::uint64_t seed)> run;
};

namespace detail {

using Build = std::function<TensorD(const std::vector<TensorD>&)>;

inline GradCheckCase op_case(const std::string& module, const std::string& name, double tol, std::vector<Shape> shapes, Build f,
                             double lo = -10.0, double hi = 10.0) {
  return {module, name, tol, [=](std::uint64_t seed) {
            Rng rng(seed);
            std::vector<TensorD> leaves;
            for (const auto& s : shapes) leaves.push_back(random_tensor(s, rng, lo, hi));
            return check_leaves(name, leaves, [&] { return f(leaves); }, tol, rng);
          }};
}

inline std::vector<GradCheckCase> tensor_cases() {
  const std::string m = "tensor-autodiff";
  const double tol = kPrimitiveTolerance;
  using V = std::vector<TensorD>;
  std::vector<GradCheckCase> c;
  c.push_back(op_case(m, "matmul", tol, {{3, 4}, {4, 5}}, [](const V& v) { return matmul(v[0], v[1]); }));
  c.push_back(op_case(m, "matmul_shared_rhs", tol, {{2, 3, 4}, {4, 5}}, [](const V& v) { return matmul(v[0], v[1]); }));
  c.push_back(op_case(m, "matmul_batched", tol, {{2, 3, 4}, {2, 4, 2}}, [](const V& v) { return matmul(v[0], v[1]); }));
  c.push_back(op_case(m, "conv2d_3x3", tol, {{5, 5, 2}, {3, 3, 2, 3}}, [](const V& v) { return conv2d(v[0], v[1], 1, 1); }));
  c.push_back(op_case(m, "conv2d_stride2_batched", tol, {{2, 5, 6, 2}, {3, 3, 2, 2}}, [](const V& v) { return conv2d(v[0], v[1], 2, 1); }));
  c.push_back(op_case(m, "conv2d_pointwise", tol, {{2, 3, 3, 4}, {1, 1, 4, 3}}, [](const V& v) { return conv2d(v[0], v[1], 1, 0); }));
  c.push_back(op_case(m, "depthwise_conv2d", tol, {{2, 5, 5, 3}, {3, 3, 3}}, [](const V& v) { return depthwise_conv2d(v[0], v[1], 2, 1); }));
  c.push_back(op_case(m, "im2col", tol, {{1, 4, 5, 2}}, [](const V& v) { return im2col(v[0], 3, 3, 1, 1); }));
  c.push_back(op_case(m, "softmax", tol, {{3, 5}}, [](const V& v) { return softmax(v[0]); }));
  c.push_back(op_case(m, "add_broadcast_leading", tol, {{2, 3, 4}, {3, 4}}, [](const V& v) { return add(v[0], v[1]); }));
  c.push_back(op_case(m, "sub_broadcast_rows", tol, {{2, 3, 4}, {2, 3, 1}}, [](const V& v) { return sub(v[0], v[1]); }));
  c.push_back(op_case(m, "mul_broadcast_general", tol, {{2, 3, 4}, {3, 1}}, [](const V& v) { return mul(v[0], v[1]); }));
  c.push_back({m, "div", tol, [tol](std::uint64_t seed) {
                 Rng rng(seed);
                 V v{random_tensor({3, 4}, rng, -10, 10), random_signed_away_from_zero({4}, rng, 1, 10)};
                 return check_leaves("div", v, [&] { return div(v[0], v[1]); }, tol, rng);
               }});
  c.push_back(op_case(m, "scale", tol, {{4, 3}}, [](const V& v) { return scale(v[0], 2.5); }));
  c.push_back(op_case(m, "add_scalar", tol, {{4, 3}}, [](const V& v) { return add_scalar(v[0], -1.5); }));
  c.push_back(op_case(m, "exp", tol, {{4, 3}}, [](const V& v) { return exp(v[0]); }, -3, 3));
  c.push_back(op_case(m, "sqrt_eps", tol, {{4, 3}}, [](const V& v) { return sqrt_eps(v[0], 1e-6); }, 0.1, 10));
  c.push_back(op_case(m, "relu", tol, {{4, 5}}, [](const V& v) { return relu(v[0]); }));
  c.push_back(op_case(m, "silu", tol, {{4, 5}}, [](const V& v) { return silu(v[0]); }));
  c.push_back(op_case(m, "sigmoid", tol, {{4, 5}}, [](const V& v) { return sigmoid(v[0]); }));
  c.push_back(op_case(m, "sum", tol, {{3, 4}}, [](const V& v) { return sum(mul(v[0], v[0])); }));
  c.push_back(op_case(m, "mean", tol, {{3, 4}}, [](const V& v) { return mean(mul(v[0], v[0])); }));
  c.push_back(op_case(m, "sum_axis", tol, {{2, 3, 4}}, [](const V& v) { return sum_axis(v[0], 1); }));
  c.push_back(op_case(m, "mean_axis_keepdim", tol, {{2, 3, 4}}, [](const V& v) { return mean_axis(v[0], -1, true); }));
  c.push_back(op_case(m, "reshape", tol, {{2, 6}}, [](const V& v) { return reshape(v[0], {3, 4}); }));
  c.push_back(op_case(m, "permute", tol, {{2, 3, 4}}, [](const V& v) { return permute(v[0], {2, 0, 1}); }));
  c.push_back(op_case(m, "transpose", tol, {{3, 4}}, [](const V& v) { return transpose(v[0]); }));
  c.push_back(op_case(m, "pad", tol, {{2, 3, 2}}, [](const V& v) { return pad(v[0], 1, 1, 2); }));
  c.push_back(op_case(m, "slice", tol, {{2, 5, 2}}, [](const V& v) { return slice(v[0], 1, 1, 4); }));
  c.push_back(op_case(m, "concat", tol, {{2, 3, 2}, {2, 3, 4}}, [](const V& v) { return concat(v[0], v[1], -1); }));
  c.push_back(op_case(m, "global_average_pool", tol, {{2, 3, 4, 5}}, [](const V& v) { return global_average_pool(v[0]); }));
  c.push_back({m, "bce_loss", tol, [tol](std::uint64_t seed) {
                 Rng rng(seed);
                 V v{random_tensor({4, 3}, rng, -10, 10)};
                 std::vector<double> t(12);
                 for (auto& x : t) x = static_cast<double>(rng() % 2);
                 return check_leaves("bce_loss", v, [&] { return bce_loss(v[0], t); }, tol, rng);
               }});
  c.push_back({m, "cross_entropy", tol, [tol](std::uint64_t seed) {
                 Rng rng(seed);
                 V v{random_tensor({4, 3}, rng, -10, 10)};
                 std::vector<std::size_t> labels(4);
                 for (auto& l : labels) l = rng() % 3;
                 return check_leaves("cross_entropy", v, [&] { return cross_entropy(v[0], labels); }, tol, rng);
               }});
  return c;
}

/// Randomises every parameter of a block so alpha, gamma, beta and tau all
/// carry signal.
inline void randomize(ParameterList<double>& params, Rng& rng, double scale) {
  for (auto& p : params)
    for (auto& x : p.tensor.mutable_data()) x = scale * (2 * uniform01(rng) - 1);
}

inline std::vector<TensorD> tensors_of(const ParameterList<double>& params) {
  std::vector<TensorD> out;
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

inline std::vector<GradCheckCase> lipschitz_cases() {
  const std::string m = "lipschitz-blocks";
  const double tol = kBlockTolerance;
  std::vector<GradCheckCase> c;
  c.push_back({m, "center_norm", tol, [tol](std::uint64_t seed) {
                 Rng rng(seed);
                 auto p = CenterNormParams<double>::create(6);
                 ParameterList<double> params;
                 p.collect("cn", params);
                 randomize(params, rng, 2.0);
                 auto leaves = tensors_of(params);
                 leaves.push_back(random_tensor({4, 6}, rng, -10, 10));
                 return check_leaves("center_norm", leaves, [&] { return center_norm(leaves.back(), p); }, tol, rng);
               }});
  c.push_back({m, "center_norm_matmul_chain", kPrimitiveTolerance, [](std::uint64_t seed) {
                 Rng rng(seed);
                 auto p = CenterNormParams<double>::create(5);
                 ParameterList<double> params;
                 p.collect("cn", params);
                 randomize(params, rng, 2.0);
                 std::vector<TensorD> leaves{random_tensor({3, 4}, rng, -10, 10), random_tensor({4, 5}, rng)};
                 return check_leaves("center_norm_matmul_chain", leaves, [&] { return center_norm(matmul(leaves[0], leaves[1]), p); },
                                     kPrimitiveTolerance, rng);
               }});
  c.push_back({m, "layer_norm", tol, [tol](std::uint64_t seed) {
                 Rng rng(seed);
                 auto p = CenterNormParams<double>::create(6);
                 std::vector<TensorD> leaves{random_tensor({4, 6}, rng, -10, 10)};
                 return check_leaves("layer_norm", leaves, [&] { return layer_norm(leaves[0], p); }, tol, rng);
               }});
  auto attention_case = [m, tol](const std::string& name, bool cosine) {
    return GradCheckCase{m, name, tol, [=](std::uint64_t seed) {
                           Rng rng(seed);
                           Initializer init(seed);
                           auto p = ScsaParams<double>::create(8, 2, init);
                           ParameterList<double> params;
                           p.collect("attn", params, BlockVariant::lipschitz);
                           randomize(params, rng, 0.5);
                           auto leaves = tensors_of(params);
                           leaves.push_back(random_tensor({2, 5, 8}, rng, -2, 2));
                           return check_leaves(
                               name, leaves, [&] { return cosine ? scsa(leaves.back(), p) : dot_product_attention(leaves.back(), p); }, tol,
                               rng);
                         }};
  };
  c.push_back(attention_case("scsa", true));
  c.push_back(attention_case("dot_product_attention", false));
  c.push_back({m, "weighted_residual", tol, [tol](std::uint64_t seed) {
                 Rng rng(seed);
                 auto p = WrsParams<double>::create(4, 0.1, 0.0);
                 std::vector<TensorD> leaves{random_tensor({3, 4}, rng, -10, 10), random_tensor({3, 4}, rng, -10, 10), p.alpha};
                 for (auto& a : p.alpha.mutable_data()) a = 2 * uniform01(rng) - 1;
                 return check_leaves("weighted_residual", leaves, [&] { return weighted_residual(leaves[0], leaves[1], p, false, nullptr); },
                                     tol, rng);
               }});
  c.push_back({m, "weighted_residual_droppath", tol, [tol](std::uint64_t seed) {
                 Rng rng(seed);
                 auto p = WrsParams<double>::create(4, 0.5, 0.5);
                 std::vector<TensorD> leaves{random_tensor({6, 2, 4}, rng, -10, 10), random_tensor({6, 2, 4}, rng, -10, 10), p.alpha};
                 // A fresh rng per evaluation keeps the drop mask fixed across probes.
                 return check_leaves("weighted_residual_droppath", leaves,
                                     [&] {
                                       Rng mask_rng(seed + 17);
                                       return weighted_residual(leaves[0], leaves[1], p, true, &mask_rng);
                                     },
                                     tol, rng);
               }});
  auto block_case = [m, tol](const std::string& name, BlockVariant variant) {
    return GradCheckCase{m, name, tol, [=](std::uint64_t seed) {
                           Rng rng(seed);
                           Initializer init(seed);
                           typename TransformerBlock<double>::Options o;
                           o.heads = 2;
                           o.variant = variant;
                           auto block = TransformerBlock<double>::create(8, o, init);
                           ParameterList<double> params;
                           block.collect("block", params);
                           randomize(params, rng, 0.5);
                           auto leaves = tensors_of(params);
                           leaves.push_back(random_tensor({2, 4, 8}, rng, -2, 2));
                           return check_leaves(name, leaves, [&] { return lipschitz_block(leaves.back(), block, false, nullptr); }, tol,
                                               rng, 24);
                         }};
  };
  c.push_back(block_case("lipschitz_block", BlockVariant::lipschitz));
  c.push_back(block_case("baseline_block", BlockVariant::baseline));
  return c;
}

inline std::vector<GradCheckCase> mobilevit_cases() {
  const std::string m = "mobilevit-blocks";
  const double tol = kBlockTolerance;
  std::vector<GradCheckCase> c;
  c.push_back(op_case(m, "unfold", tol, {{6, 4, 3}}, [](const std::vector<TensorD>& v) { return unfold(v[0], PatchSize{2, 2}); }));
  c.push_back(op_case(m, "fold", tol, {{4, 6, 3}}, [](const std::vector<TensorD>& v) { return fold(v[0], PatchSize{2, 2}, 4, 6); }));
  auto ir_case = [m, tol](const std::string& name, std::size_t cin, std::size_t cout, std::size_t stride) {
    return GradCheckCase{m, name, tol, [=](std::uint64_t seed) {
                           Rng rng(seed);
                           Initializer init(seed);
                           auto block = InvertedResidual<double>::create(cin, cout, stride, 4, 3, init);
                           ParameterList<double> params;
                           block.collect("ir", params);
                           randomize(params, rng, 0.5);
                           auto leaves = tensors_of(params);
                           leaves.push_back(random_tensor({4, 4, cin}, rng, -2, 2));
                           return check_leaves(name, leaves, [&] { return inverted_residual(leaves.back(), block); }, tol, rng, 24);
                         }};
  };
  c.push_back(ir_case("inverted_residual", 3, 3, 1));
  c.push_back(ir_case("inverted_residual_stride2", 3, 5, 2));
  auto fast_case = [m, tol](const std::string& name, std::size_t depth, Shape input) {
    return GradCheckCase{m, name, tol, [=](std::uint64_t seed) {
                           Rng rng(seed);
                           Initializer init(seed);
                           typename FastBlock<double>::Options o;
                           o.block.heads = 2;
                           auto block = FastBlock<double>::create(input.back(), input.back(), 8, depth, o, init);
                           ParameterList<double> params;
                           block.collect("fast", params);
                           randomize(params, rng, 0.4);
                           auto leaves = tensors_of(params);
                           leaves.push_back(random_tensor(input, rng, -2, 2));
                           return check_leaves(name, leaves, [&] { return fast_block(leaves.back(), block, false, nullptr); }, tol, rng, 16);
                         }};
  };
  c.push_back(fast_case("fast_block", 1, {1, 4, 4, 4}));
  c.push_back(fast_case("fast_block_depth0", 0, {1, 4, 4, 4}));
  c.push_back(fast_case("fast_block_odd_extent", 1, {2, 5, 3, 4}));
  return c;
}

inline std::vector<GradCheckCase> model_cases() {
  return {{"model", "tiny_model_mean_logit", kEndToEndTolerance, [](std::uint64_t seed) {
             Rng rng(seed);
             BuildOptions bo;
             bo.seed = seed;
             auto model = FastModel<double>::build(ModelConfig::tiny(), bo);
             std::vector<TensorD> leaves{random_tensor({1, 32, 64, 1}, rng, -1, 1)};
             // A handful of parameters from the stem, a transformer block and the head.
             for (const auto& p : model.parameters()) {
               if (p.name == "stem.weight" || p.name == "stage3.fast.transformer.0.attention.wq" || p.name == "head.fc2.weight" ||
                   p.name == "stage5.fast.transformer.0.residual1.alpha")
                 leaves.push_back(p.tensor);
             }
             return check_leaves("tiny_model_mean_logit", leaves, [&] { return mean(model.forward(leaves[0], false, nullptr)); },
                                 kEndToEndTolerance, rng, 24);
           }}};
}

}  // namespace detail

inline const std::vector<std::string>& gradcheck_modules() {
  static const std::vector<std::string> names{"tensor-autodiff", "lipschitz-blocks", "mobilevit-blocks", "model"};
  return names;
}

/// Cases for one module, or every module for "all".
inline std::vector<GradCheckCase> gradcheck_cases(const std::string& module) {
  std::vector<GradCheckCase> out;
  auto append = [&](std::vector<GradCheckCase> v) { out.insert(out.end(), v.begin(), v.end()); };
  const bool all = module == "all";
  if (all || module == "tensor-autodiff") append(detail::tensor_cases());
  if (all || module == "lipschitz-blocks") append(detail::lipschitz_cases());
  if (all || module == "mobilevit-blocks") append(detail::mobilevit_cases());
  if (all || module == "model") append(detail::model_cases());
  if (out.empty()) throw UsageError("unknown gradcheck module '" + module + "'");
  return out;
}

/// Runs each case over seeds [first_seed, first_seed + seeds) and keeps the
/// worst report per case.
inline std::vector<GradCheckReport> run_gradchecks(const std::string& module, std::size_t seeds, std::uint64_t first_seed = 0) {
  std::vector<GradCheckReport> reports;
  for (const auto& c : gradcheck_cases(module)) {
    GradCheckReport worst{c.module + "/" + c.name, 0.0, std::nullopt, c.tolerance};
    for (std::size_t s = 0; s < seeds; ++s) {
      auto r = c.run(first_seed + s);
      if (r.max_rel_error >= worst.max_rel_error) {
        worst.max_rel_error = r.max_rel_error;
        worst.failing_index = r.failing_index;
      }
    }
    reports.push_back(worst);
  }
  return reports;
}

}  // namespace fast::testkit
