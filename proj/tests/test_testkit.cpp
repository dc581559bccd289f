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

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "fast/gradcheck.hpp"
#include "fast/lipschitz.hpp"
#include "fast/testkit.hpp"

namespace fast::testkit {
namespace {

VectorMap linear_map(const std::vector<double>& m, std::size_t rows, std::size_t cols) {
  return [=](const std::vector<double>& x) {
    std::vector<double> y(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) y[r] += m[r * cols + c] * x[c];
    return y;
  };
}

TEST(FiniteDiff, SumGivesOnes) {
  Rng rng(1);
  auto x = random_tensor({2, 3}, rng, -5, 5);
  auto g = finite_diff_grad([](const TensorD& t) { return sum(t).item(); }, x);
  for (double v : g.data()) EXPECT_NEAR(v, 1.0, 1e-9);
}

TEST(FiniteDiff, HalfSquaredNormGivesInput) {
  Rng rng(2);
  auto x = random_tensor({7}, rng, -3, 3);
  auto g = finite_diff_grad(
      [](const TensorD& t) {
        double s = 0;
        for (double v : t.data()) s += v * v;
        return 0.5 * s;
      },
      x);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(g[i], x[i], 1e-8);
}

TEST(FiniteDiff, NonFiniteObjectiveIsOracleError) {
  TensorD x({2}, 0.0);
  EXPECT_THROW(finite_diff_grad([](const TensorD& t) { return std::log(t[0]); }, x), OracleError);
}

TEST(FiniteDiff, InPlaceProbeRestoresTarget) {
  Rng rng(3);
  auto x = random_tensor({5}, rng);
  const std::vector<double> before(x.data().begin(), x.data().end());
  auto g = finite_diff_inplace([&] { return x[0] * x[3]; }, x, 1e-5, {0, 3});
  EXPECT_EQ(std::vector<double>(x.data().begin(), x.data().end()), before);
  EXPECT_NEAR(g[0], before[3], 1e-9);
  EXPECT_NEAR(g[3], before[0], 1e-9);
  EXPECT_EQ(g[1], 0.0);
}

TEST(CompareGradients, FlagsWorstCoordinate) {
  auto ok = compare_gradients("op", {1, 2, 3}, {1, 2, 3 + 1e-9}, 1e-6);
  EXPECT_TRUE(ok.passed());
  EXPECT_FALSE(ok.failing_index.has_value());
  auto bad = compare_gradients("op", {1, 2, 3}, {1, 2.5, 3}, 1e-6);
  EXPECT_FALSE(bad.passed());
  EXPECT_EQ(bad.failing_index, 1u);
  EXPECT_NEAR(bad.max_rel_error, 0.5 / 3.0, 1e-15);
  EXPECT_FALSE(compare_gradients("op", {std::nan("")}, {1}, 1e-3).passed());
}

TEST(EmpiricalLipschitz, ScalingByTwo) {
  Rng rng(4);
  const double est = empirical_lipschitz(
      [](const std::vector<double>& x) {
        auto y = x;
        for (auto& v : y) v *= 2;
        return y;
      },
      gaussian_pairs(6), 200, rng);
  EXPECT_GE(est, 2.0 - 1e-6);
  EXPECT_LE(est, 2.0 + 1e-12);
}

TEST(EmpiricalLipschitz, CenterNormUnitGammaBound) {
  auto p = CenterNormParams<double>::create(8);
  Rng rng(5);
  const double est = empirical_lipschitz(
      [&](const std::vector<double>& x) {
        auto y = center_norm(TensorD({8}, x), p);
        return std::vector<double>(y.data().begin(), y.data().end());
      },
      gaussian_pairs(8), 5000, rng);
  EXPECT_LE(est, 8.0 / 7.0 + 1e-9);
  EXPECT_GE(est, 0.9 * 8.0 / 7.0);
}

TEST(EmpiricalLipschitz, ScsaOnHugeInputsIsNearZero) {
  Initializer init(6);
  auto p = ScsaParams<double>::create(8, 2, init);
  Rng rng(6);
  const double est = empirical_lipschitz(
      [&](const std::vector<double>& x) {
        auto y = scsa(TensorD({4, 8}, x), p);
        for (double v : y.data()) EXPECT_LE(std::abs(v), p.nu);
        return std::vector<double>(y.data().begin(), y.data().end());
      },
      gaussian_pairs(32, 1e6), 200, rng);
  // Outputs of 4 rows live in a ball of radius 2 nu while inputs sit ~1e6 apart.
  EXPECT_LT(est, 4.0 * p.nu / 1e6);
}

TEST(EmpiricalLipschitz, CoincidentPairsAreRejected) {
  Rng rng(7);
  PairSampler same = [](Rng&) { return std::make_pair(std::vector<double>{1.0}, std::vector<double>{1.0}); };
  EXPECT_THROW(empirical_lipschitz([](const std::vector<double>& x) { return x; }, same, 1, rng), OracleError);
}

TEST(SpectralNorm, KnownMatrices) {
  std::vector<double> eye(64, 0.0);
  for (std::size_t i = 0; i < 8; ++i) eye[i * 9] = 1.0;
  EXPECT_NEAR(spectral_norm(eye, 8, 8), 1.0, 1e-12);
  EXPECT_NEAR(spectral_norm({3, 0, 0, 1}, 2, 2), 3.0, 1e-9);
  EXPECT_NEAR(spectral_norm({0, 0, 0, 0}, 2, 2), 0.0, 1e-15);
  // [[1, 1], [0, 1]] has largest singular value the golden ratio.
  EXPECT_NEAR(spectral_norm({1, 1, 0, 1}, 2, 2), (1 + std::sqrt(5.0)) / 2, 1e-8);
  EXPECT_NEAR(spectral_norm({1, 2, 3}, 1, 3), std::sqrt(14.0), 1e-10);
}

TEST(SpectralNorm, NonConvergenceIsOracleError) {
  Rng rng(8);
  auto m = random_tensor({6, 6}, rng);
  EXPECT_THROW(spectral_norm(std::vector<double>(m.data().begin(), m.data().end()), 6, 6, 1e-10, 2), OracleError);
  EXPECT_THROW(spectral_norm({1, 2}, 2, 2), OracleError);
}

TEST(CrossOracle, EmpiricalApproachesSpectralNormForLinearMaps) {
  Rng rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    auto m = random_tensor({4, 4}, rng);
    const std::vector<double> mv(m.data().begin(), m.data().end());
    const double sigma = spectral_norm(mv, 4, 4);
    const double est = empirical_lipschitz(linear_map(mv, 4, 4), gaussian_pairs(4), 10000, rng);
    EXPECT_LE(est, sigma + 1e-6);
    EXPECT_GE(est, 0.95 * sigma);
  }
}

TEST(CrossOracle, NumericJacobianOfLinearMap) {
  const std::vector<double> m{1, -2, 0.5, 3, 0, 1};
  std::size_t out = 0;
  const auto jac = numeric_jacobian(linear_map(m, 2, 3), {0.1, 0.2, 0.3}, out);
  EXPECT_EQ(out, 2u);
  for (std::size_t i = 0; i < m.size(); ++i) EXPECT_NEAR(jac[i], m[i], 1e-9);
}

TEST(NaiveConv, HandExample) {
  // 3x3 single-channel input, 2x2 kernel of ones, no padding: window sums.
  std::size_t oh = 0, ow = 0;
  auto y = naive_conv2d({1, 2, 3, 4, 5, 6, 7, 8, 9}, 3, 3, 1, {1, 1, 1, 1}, 2, 2, 1, 1, 0, oh, ow);
  EXPECT_EQ(oh, 2u);
  EXPECT_EQ(ow, 2u);
  EXPECT_EQ(y, (std::vector<double>{12, 16, 24, 28}));
}

TEST(MetricOracles, HandValues) {
  EXPECT_DOUBLE_EQ(f1_reference({1, 1, 0, 0}, {1, 0, 1, 0}), 0.5);
  EXPECT_DOUBLE_EQ(f1_reference({0, 0}, {0, 0}), 0.0);
  // Ranking: 0.9(+), 0.8(-), 0.3(+): AP = (1 + 2/3) / 2.
  EXPECT_NEAR(average_precision_reference({0.3, 0.9, 0.8}, {1, 1, 0}), (1.0 + 2.0 / 3.0) / 2.0, 1e-15);
  // Tie: the earlier sample ranks first.
  EXPECT_NEAR(average_precision_reference({0.5, 0.5}, {0, 1}), 0.5, 1e-15);
  EXPECT_TRUE(std::isnan(average_precision_reference({0.5}, {0})));
  EXPECT_NEAR(bce_reference({0.0}, {1.0}), std::log(2.0), 1e-15);
  // log(1 + e^30) = 30 + 9.3576229688e-14 to 20 digits.
  EXPECT_NEAR(bce_reference({30.0}, {0.0}), 30.000000000000093576, 1e-12);
  EXPECT_NEAR(bce_reference({-30.0}, {1.0}), 30.000000000000093576, 1e-12);
}

TEST(CrossOracle, SparsePairsReachCoordinateScalingNorm) {
  // diag(3, 1, ..., 1) in 32 dimensions: Gaussian pairs rarely align with e_0,
  // single-coordinate differences hit it exactly.
  std::vector<double> m(32 * 32, 0.0);
  for (std::size_t i = 0; i < 32; ++i) m[i * 32 + i] = i == 0 ? 3.0 : 1.0;
  Rng rng(11);
  const double est = empirical_lipschitz(linear_map(m, 32, 32), mixed_sparse_pairs(32), 2000, rng);
  EXPECT_NEAR(est, 3.0, 1e-12);
  auto sampler = mixed_sparse_pairs(5, 2.0);
  std::size_t sparse = 0;
  for (int i = 0; i < 200; ++i) {
    auto [x, y] = sampler(rng);
    std::size_t changed = 0;
    for (std::size_t k = 0; k < 5; ++k) changed += x[k] != y[k];
    sparse += changed <= 2;
  }
  EXPECT_GT(sparse, 60u);
  EXPECT_LT(sparse, 140u);
}

TEST(GradCheckSuite, CoversEveryModule) {
  for (const auto& m : gradcheck_modules()) EXPECT_FALSE(gradcheck_cases(m).empty()) << m;
  EXPECT_THROW(gradcheck_cases("nope"), UsageError);
  std::size_t total = 0;
  for (const auto& m : gradcheck_modules()) total += gradcheck_cases(m).size();
  EXPECT_EQ(gradcheck_cases("all").size(), total);
}

TEST(GradCheckSuite, DetectsABrokenBackwardRule) {
  // y = x^2 with a deliberately wrong derivative of 3x.
  Rng rng(10);
  std::vector<TensorD> leaves{random_tensor({4}, rng, 1, 2)};
  auto report = check_leaves(
      "bad_square", leaves, [&] { return fast::detail::unary_op(leaves[0], [](double v) { return v * v; }, [](double x, double) { return 3 * x; }); },
      kPrimitiveTolerance, rng);
  EXPECT_FALSE(report.passed());
  EXPECT_TRUE(report.failing_index.has_value());
}

}  // namespace
}  // namespace fast::testkit
