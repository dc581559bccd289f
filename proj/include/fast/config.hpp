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

#include <array>
#include <cstddef>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "fast/errors.hpp"

namespace fast {

/// Network hyperparameters. JSON keys match the field names exactly.
struct ModelConfig {
  std::array<std::size_t, 2> image_size{128, 1876};  // (H mel bins, W frames)
  std::vector<std::size_t> hidden_dims{96, 128, 144};
  std::vector<std::size_t> channels{16, 32, 48, 48, 64, 64, 80, 80, 96, 96, 384};
  std::size_t num_classes = 2;
  std::size_t expansion = 4;
  std::size_t kernel = 3;
  std::array<std::size_t, 2> patch_size{2, 2};  // (w, h)
  std::vector<std::size_t> depths{2, 4, 4};

  /// The published reference configuration.
  static ModelConfig reference(std::size_t num_classes = 2) {
    ModelConfig c;
    c.num_classes = num_classes;
    return c;
  }

  /// Desk-scale configuration used by tests and the stability experiment.
  static ModelConfig tiny(std::size_t num_classes = 2) {
    ModelConfig c;
    c.image_size = {32, 64};
    c.hidden_dims = {8, 8, 8};
    c.channels = {4, 8, 8, 8, 12, 12, 16, 16, 16, 16, 32};
    c.num_classes = num_classes;
    c.depths = {1, 1, 1};
    return c;
  }

  void validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("invalid model config: " + msg); };
    if (channels.size() != 11) fail("channels must have 11 entries, got " + std::to_string(channels.size()));
    if (hidden_dims.size() != 3) fail("hidden_dims must have 3 entries, got " + std::to_string(hidden_dims.size()));
    if (depths.size() != hidden_dims.size()) fail("depths must have as many entries as hidden_dims");
    if (image_size[0] == 0 || image_size[1] == 0) fail("image_size extents must be positive");
    for (auto c : channels)
      if (c == 0) fail("channels must be positive");
    for (auto d : hidden_dims)
      if (d < 2) fail("hidden_dims entries must be >= 2");
    if (num_classes == 0) fail("num_classes must be positive");
    if (expansion == 0) fail("expansion must be positive");
    if (kernel == 0 || kernel % 2 == 0) fail("kernel must be odd and positive");
    if (patch_size[0] == 0 || patch_size[1] == 0) fail("patch_size extents must be positive");
  }

  bool operator==(const ModelConfig&) const = default;
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return nlohmann::json{{"image_size", c.image_size}, {"hidden_dims", c.hidden_dims}, {"channels", c.channels},
                        {"num_classes", c.num_classes}, {"expansion", c.expansion},     {"kernel", c.kernel},
                        {"patch_size", c.patch_size},   {"depths", c.depths}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  static const std::set<std::string> keys{"image_size", "hidden_dims", "channels", "num_classes",
                                          "expansion",  "kernel",      "patch_size", "depths"};
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (!keys.count(key)) throw ConfigError("unknown model config field '" + key + "'");
  ModelConfig c;
  auto read = [&](const char* key, auto& dst) {
    if (!j.contains(key)) throw ConfigError(std::string("missing model config field '") + key + "'");
    try {
      j.at(key).get_to(dst);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("bad value for model config field '") + key + "': " + e.what());
    }
  };
  read("image_size", c.image_size);
  read("hidden_dims", c.hidden_dims);
  read("channels", c.channels);
  read("num_classes", c.num_classes);
  read("expansion", c.expansion);
  read("kernel", c.kernel);
  read("patch_size", c.patch_size);
  read("depths", c.depths);
  c.validate();
  return c;
}

inline ModelConfig load_model_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
  }
  return model_config_from_json(j);
}

}  // namespace fast
