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

#include "fast/init.hpp"
#include "fast/ops.hpp"

namespace fast {

/// y = x W + b with W [in, out].
template <typename T>
struct Linear {
  Tensor<T> weight;
  Tensor<T> bias;

  static Linear truncated_normal(std::size_t in, std::size_t out, Initializer& init, double stddev = 0.02) {
    return {make_parameter<T>({in, out}, init.truncated_normal(in * out, stddev)), constant_parameter<T>({out}, 0.0)};
  }

  static Linear kaiming(std::size_t in, std::size_t out, Initializer& init) {
    return {make_parameter<T>({in, out}, init.kaiming_uniform(in * out, in)), constant_parameter<T>({out}, 0.0)};
  }

  std::size_t in_features() const { return weight.shape()[0]; }
  std::size_t out_features() const { return weight.shape()[1]; }

  Tensor<T> operator()(const Tensor<T>& x) const { return add(matmul(x, weight), bias); }

  void collect(const std::string& prefix, ParameterList<T>& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }
};

/// Dense convolution with optional bias and SiLU.
template <typename T>
struct Conv2dLayer {
  Tensor<T> weight;  // [k, k, Cin, Cout]
  Tensor<T> bias;    // [Cout], may be undefined
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool activation = false;

  static Conv2dLayer create(std::size_t kernel, std::size_t cin, std::size_t cout, std::size_t stride, bool activation,
                            Initializer& init, bool with_bias = true) {
    Conv2dLayer c;
    c.weight = make_parameter<T>({kernel, kernel, cin, cout}, init.kaiming_uniform(kernel * kernel * cin * cout, kernel * kernel * cin));
    if (with_bias) c.bias = constant_parameter<T>({cout}, 0.0);
    c.stride = stride;
    c.padding = kernel / 2;
    c.activation = activation;
    return c;
  }

  std::size_t in_channels() const { return weight.shape()[2]; }
  std::size_t out_channels() const { return weight.shape()[3]; }

  Tensor<T> operator()(const Tensor<T>& x) const {
    Tensor<T> y = conv2d(x, weight, stride, padding);
    if (bias.defined()) y = add(y, bias);
    return activation ? silu(y) : y;
  }

  void collect(const std::string& prefix, ParameterList<T>& out) const {
    out.push_back({prefix + ".weight", weight});
    if (bias.defined()) out.push_back({prefix + ".bias", bias});
  }
};

template <typename T>
struct DepthwiseConvLayer {
  Tensor<T> weight;  // [k, k, C]
  Tensor<T> bias;    // [C]
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool activation = true;

  static DepthwiseConvLayer create(std::size_t kernel, std::size_t channels, std::size_t stride, bool activation, Initializer& init) {
    DepthwiseConvLayer c;
    c.weight = make_parameter<T>({kernel, kernel, channels}, init.kaiming_uniform(kernel * kernel * channels, kernel * kernel));
    c.bias = constant_parameter<T>({channels}, 0.0);
    c.stride = stride;
    c.padding = kernel / 2;
    c.activation = activation;
    return c;
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    Tensor<T> y = add(depthwise_conv2d(x, weight, stride, padding), bias);
    return activation ? silu(y) : y;
  }

  void collect(const std::string& prefix, ParameterList<T>& out) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }
};

}  // namespace fast
