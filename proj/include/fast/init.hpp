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

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "fast/ops.hpp"

namespace fast {

using Rng = std::mt19937_64;

/// Uniform draw in [0, 1) with 53 random bits. Portable across standard
/// libraries, unlike std::uniform_real_distribution.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

/// Box-Muller; portable for the same reason as uniform01.
inline double standard_normal(Rng& rng) {
  constexpr double two_pi = 6.283185307179586476925;
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
}

/// Deterministic parameter initialisation. Values are drawn in double and
/// cast, so float and double models built from one seed agree up to rounding.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : rng_(seed) {}

  std::vector<double> truncated_normal(std::size_t n, double stddev) {
    std::vector<double> v(n);
    for (auto& x : v) {
      double z = standard_normal(rng_);
      while (std::abs(z) > 2.0) z = standard_normal(rng_);
      x = z * stddev;
    }
    return v;
  }

  /// U(-b, b) with b = sqrt(6 / fan_in).
  std::vector<double> kaiming_uniform(std::size_t n, std::size_t fan_in) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::vector<double> v(n);
    for (auto& x : v) x = (2.0 * uniform01(rng_) - 1.0) * bound;
    return v;
  }

  Rng& engine() { return rng_; }

 private:
  Rng rng_;
};

template <typename T>
Tensor<T> make_parameter(Shape shape, const std::vector<double>& values) {
  return Tensor<T>::parameter(std::move(shape), std::vector<T>(values.begin(), values.end()));
}

template <typename T>
Tensor<T> constant_parameter(Shape shape, double value) {
  const std::size_t n = numel(shape);
  return Tensor<T>::parameter(std::move(shape), std::vector<T>(n, static_cast<T>(value)));
}

template <typename T>
struct NamedParameter {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
using ParameterList = std::vector<NamedParameter<T>>;

}  // namespace fast
