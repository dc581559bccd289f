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

#include <filesystem>
#include <fstream>
#include <vector>

#include <gtest/gtest.h>

#include "fast/checkpoint.hpp"
#include "fast/config.hpp"
#include "fast/gradcheck.hpp"
#include "fast/model.hpp"
#include "fast/testkit.hpp"

namespace fast {
namespace {

std::string temp_path(const std::string& name) { return (std::filesystem::temp_directory_path() / name).string(); }

TEST(Config, ReferenceParameterCountInRange) {
  auto model = FastModel<float>::build(ModelConfig::reference(2));
  const auto n = model.parameter_count();
  EXPECT_GE(n, 1600000u);
  EXPECT_LE(n, 2400000u);
  EXPECT_EQ(n, 1754234u);
}

TEST(Config, LayerSummaryAddsUpToTotal) {
  auto model = FastModel<float>::build(ModelConfig::tiny());
  std::size_t total = 0;
  for (const auto& row : model.layer_summary()) total += row.parameters;
  EXPECT_EQ(total, model.parameter_count());
  EXPECT_EQ(model.layer_summary().front().name, "stem");
  EXPECT_EQ(model.layer_summary().back().name, "head.fc2");
}

TEST(Config, JsonRoundTrip) {
  const auto cfg = ModelConfig::tiny(5);
  EXPECT_EQ(model_config_from_json(to_json(cfg)), cfg);
  const auto path = temp_path("fast_test_config.json");
  std::ofstream(path) << to_json(ModelConfig::reference()).dump(2);
  EXPECT_EQ(load_model_config(path), ModelConfig::reference());
  std::filesystem::remove(path);
}

TEST(Config, ErrorsNameTheField) {
  auto j = to_json(ModelConfig::tiny());
  j["channels"] = std::vector<int>{1, 2, 3};
  try {
    model_config_from_json(j);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("channels"), std::string::npos) << e.what();
  }
  auto k = to_json(ModelConfig::tiny());
  k["kernal"] = 3;
  EXPECT_THROW(model_config_from_json(k), ConfigError);
  auto m = to_json(ModelConfig::tiny());
  m.erase("depths");
  try {
    model_config_from_json(m);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("depths"), std::string::npos);
  }
}

TEST(Config, MissingFileNamesPath) {
  try {
    load_model_config("/nonexistent/dir/model.json");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/dir/model.json"), std::string::npos);
  }
}

TEST(Config, HeadsMustDivideHiddenDims) {
  auto cfg = ModelConfig::tiny();
  cfg.hidden_dims = {8, 10, 8};
  EXPECT_THROW(FastModel<double>::build(cfg), ConfigError);
}

TEST(Model, TinyForwardShapesAndFinite) {
  auto model = FastModel<double>::build(ModelConfig::tiny(3));
  Rng rng(1);
  auto y = model.forward(testkit::random_tensor({2, 32, 64, 1}, rng));
  EXPECT_EQ(y.shape(), (Shape{2, 3}));
  for (double v : y.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(Model, OddExtentsArePadded) {
  auto cfg = ModelConfig::tiny();
  cfg.image_size = {30, 50};
  auto model = FastModel<float>::build(cfg);
  EXPECT_EQ(model.forward(TensorF({1, 30, 50, 1}, 0.5f)).shape(), (Shape{1, 2}));
}

TEST(Model, WrongInputShapeIsDimensionError) {
  auto model = FastModel<float>::build(ModelConfig::tiny());
  EXPECT_THROW(model.forward(TensorF({1, 32, 63, 1})), DimensionError);
  EXPECT_THROW(model.forward(TensorF({32, 64, 1})), DimensionError);
}

TEST(Model, SameSeedSameParameters) {
  BuildOptions a, b, c;
  c.seed = 1;
  auto m1 = FastModel<float>::build(ModelConfig::tiny(), a);
  auto m2 = FastModel<float>::build(ModelConfig::tiny(), b);
  auto m3 = FastModel<float>::build(ModelConfig::tiny(), c);
  const auto p1 = m1.parameters(), p2 = m2.parameters(), p3 = m3.parameters();
  bool any_diff = false;
  for (std::size_t i = 0; i < p1.size(); ++i) {
    ASSERT_EQ(p1[i].name, p2[i].name);
    for (std::size_t k = 0; k < p1[i].tensor.size(); ++k) {
      ASSERT_EQ(p1[i].tensor[k], p2[i].tensor[k]);
      any_diff = any_diff || p1[i].tensor[k] != p3[i].tensor[k];
    }
  }
  EXPECT_TRUE(any_diff);
}

TEST(Model, DropPathRampAndInitValues) {
  auto model = FastModel<double>::build(ModelConfig::tiny());
  for (const auto& p : model.parameters()) {
    if (p.name.ends_with("alpha")) {
      for (double v : p.tensor.data()) EXPECT_DOUBLE_EQ(v, 0.1);
    }
    if (p.name.ends_with("log_tau")) {
      for (double v : p.tensor.data()) EXPECT_NEAR(std::exp(v), 5.0, 1e-12);
    }
    if (p.name.ends_with("gamma")) {
      for (double v : p.tensor.data()) EXPECT_EQ(v, 1.0);
    }
  }
}

TEST(Model, BaselineVariantHasNoLipschitzParameters) {
  BuildOptions o;
  o.variant = BlockVariant::baseline;
  auto base = FastModel<float>::build(ModelConfig::tiny(), o);
  for (const auto& p : base.parameters()) {
    EXPECT_FALSE(p.name.ends_with("alpha")) << p.name;
    EXPECT_FALSE(p.name.ends_with("log_tau")) << p.name;
  }
  EXPECT_LT(base.parameter_count(), FastModel<float>::build(ModelConfig::tiny()).parameter_count());
}

TEST(Model, EvalInferenceIsDeterministic) {
  auto m1 = FastModel<float>::build(ModelConfig::tiny());
  auto m2 = FastModel<float>::build(ModelConfig::tiny());
  Rng rng(3);
  auto x = testkit::random_tensor({2, 32, 64, 1}, rng).cast<float>();
  auto a = m1.forward(x), b = m2.forward(x), c = m1.forward(x);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i], b[i]);
    EXPECT_EQ(a[i], c[i]);
  }
}

TEST(Checkpoint, RoundTripIsBitExact) {
  BuildOptions o;
  o.seed = 9;
  auto model = FastModel<float>::build(ModelConfig::tiny(), o);
  const auto path = temp_path("fast_test_ckpt.fstc");
  save_checkpoint(model, path);
  auto loaded = load_model<float>(ModelConfig::tiny(), path);
  std::filesystem::remove(path);
  const auto a = model.parameters(), b = loaded.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < a[i].tensor.size(); ++k)
      ASSERT_EQ(std::bit_cast<std::uint32_t>(a[i].tensor[k]), std::bit_cast<std::uint32_t>(b[i].tensor[k]));
  Rng rng(4);
  auto x = testkit::random_tensor({1, 32, 64, 1}, rng).cast<float>();
  auto ya = model.forward(x), yb = loaded.forward(x);
  for (std::size_t i = 0; i < ya.size(); ++i) EXPECT_EQ(ya[i], yb[i]);
}

TEST(Checkpoint, CorruptionReportsField) {
  auto model = FastModel<float>::build(ModelConfig::tiny());
  std::vector<CheckpointEntry> entries;
  for (const auto& p : model.parameters()) entries.push_back({p.name, p.tensor.shape(), std::vector<float>(p.tensor.data().begin(), p.tensor.data().end())});
  auto bytes = encode_checkpoint(entries);

  auto truncated = bytes;
  truncated.resize(bytes.size() - 5);
  try {
    decode_checkpoint(truncated);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.field(), "data");
  }
  auto bad_magic = bytes;
  bad_magic[1] = 'X';
  try {
    decode_checkpoint(bad_magic);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.field(), "magic");
  }
  auto bad_version = bytes;
  bad_version[4] = 9;
  try {
    decode_checkpoint(bad_version);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.field(), "version");
    EXPECT_EQ(e.offset(), 4u);
  }
  auto header_only = bytes;
  header_only.resize(13);
  try {
    decode_checkpoint(header_only);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.field(), "name_length");
  }
}

TEST(Checkpoint, MismatchedModelIsConfigError) {
  auto model = FastModel<float>::build(ModelConfig::tiny());
  const auto path = temp_path("fast_test_ckpt_mismatch.fstc");
  save_checkpoint(model, path);
  EXPECT_THROW(load_model<float>(ModelConfig::tiny(3), path), ConfigError);
  BuildOptions base;
  base.variant = BlockVariant::baseline;
  EXPECT_THROW(load_model<float>(ModelConfig::tiny(), path, base), ConfigError);
  std::filesystem::remove(path);
  EXPECT_THROW(load_model<float>(ModelConfig::tiny(), path), Error);
}

TEST(GradCheck, TinyModelOverTwentySeeds) {
  for (const auto& r : testkit::run_gradchecks("model", 20)) EXPECT_TRUE(r.passed()) << r.op << " max rel error " << r.max_rel_error;
}

}  // namespace
}  // namespace fast
