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

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "fast/model.hpp"

namespace fast {

// ---------------------------------------------------------------------------
// Losses

/// Mean binary cross-entropy over every logit, in log-space:
/// max(z, 0) - z t + log(1 + exp(-|z|)).
template <typename T>
Tensor<T> bce_loss(const Tensor<T>& logits, const std::vector<T>& targets) {
  if (targets.size() != logits.size()) {
    throw UsageError("bce_loss: " + std::to_string(targets.size()) + " targets for logits " + to_string(logits.shape()));
  }
  for (T t : targets)
    if (t != T(0) && t != T(1)) throw UsageError("bce_loss targets must be 0 or 1");
  const auto z = logits.data();
  const T inv_n = T(1) / static_cast<T>(z.size());
  T total = T(0);
  for (std::size_t i = 0; i < z.size(); ++i) total += std::max(z[i], T(0)) - z[i] * targets[i] + std::log1p(std::exp(-std::abs(z[i])));
  Tensor<T> loss = Tensor<T>::scalar(total * inv_n);
  detail::record_op(loss, {&logits}, [zn = logits.node(), targets, inv_n](std::span<const T> g) {
    auto* gz = detail::grad_sink<T>(zn);
    if (!gz) return;
    for (std::size_t i = 0; i < targets.size(); ++i) (*gz)[i] += g[0] * inv_n * (sigmoid_scalar(zn->data[i]) - targets[i]);
  });
  return loss;
}

/// Mean softmax cross-entropy of logits [B, C] against integer labels.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& labels) {
  if (logits.rank() != 2 || logits.shape()[0] != labels.size()) {
    throw UsageError("cross_entropy: logits " + to_string(logits.shape()) + " vs " + std::to_string(labels.size()) + " labels");
  }
  const std::size_t b = logits.shape()[0], c = logits.shape()[1];
  for (auto l : labels)
    if (l >= c) throw UsageError("cross_entropy label " + std::to_string(l) + " out of range [0, " + std::to_string(c) + ")");
  const auto z = logits.data();
  std::vector<T> probs(z.size());
  T total = T(0);
  for (std::size_t r = 0; r < b; ++r) {
    const T* row = z.data() + r * c;
    const T mx = *std::max_element(row, row + c);
    T s = T(0);
    for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - mx);
    const T lse = mx + std::log(s);
    for (std::size_t j = 0; j < c; ++j) probs[r * c + j] = std::exp(row[j] - lse);
    total += lse - row[labels[r]];
  }
  const T inv_b = T(1) / static_cast<T>(b);
  Tensor<T> loss = Tensor<T>::scalar(total * inv_b);
  detail::record_op(loss, {&logits}, [zn = logits.node(), probs = std::move(probs), labels, c, inv_b](std::span<const T> g) {
    auto* gz = detail::grad_sink<T>(zn);
    if (!gz) return;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      const T onehot = labels[i / c] == i % c ? T(1) : T(0);
      (*gz)[i] += g[0] * inv_b * (probs[i] - onehot);
    }
  });
  return loss;
}

// ---------------------------------------------------------------------------
// Metrics

inline double accuracy(const std::vector<int>& preds, const std::vector<int>& labels) {
  if (preds.empty() || preds.size() != labels.size()) throw UsageError("accuracy needs equal-length non-empty inputs");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(preds.size());
}

/// F1 of the positive class (label 1); 0 when precision + recall == 0.
inline double f1_binary(const std::vector<int>& preds, const std::vector<int>& labels) {
  if (preds.empty() || preds.size() != labels.size()) throw UsageError("f1_binary needs equal-length non-empty inputs");
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    tp += preds[i] == 1 && labels[i] == 1;
    fp += preds[i] == 1 && labels[i] != 1;
    fn += preds[i] != 1 && labels[i] == 1;
  }
  const double precision = tp + fp > 0 ? tp / (tp + fp) : 0.0;
  const double recall = tp + fn > 0 ? tp / (tp + fn) : 0.0;
  return precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

/// Average precision of one class: samples ranked by descending score (ties
/// keep input order), precision summed at each positive rank, divided by the
/// number of positives. Returns NaN when the class has no positives.
inline double average_precision(const std::vector<double>& scores, const std::vector<int>& targets) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double hits = 0, sum_precision = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (targets[order[rank]] == 1) {
      hits += 1;
      sum_precision += hits / static_cast<double>(rank + 1);
    }
  }
  return hits > 0 ? sum_precision / hits : std::numeric_limits<double>::quiet_NaN();
}

/// Mean over classes with at least one positive of per-class average precision.
/// `scores` and `targets` are row-major [B, C].
inline double mean_average_precision(const std::vector<double>& scores, const std::vector<int>& targets, std::size_t classes) {
  if (scores.empty() || classes == 0 || scores.size() % classes != 0 || scores.size() != targets.size()) {
    throw UsageError("mean_average_precision needs non-empty [B, C] scores and targets");
  }
  const std::size_t b = scores.size() / classes;
  double total = 0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    std::vector<double> s(b);
    std::vector<int> t(b);
    for (std::size_t i = 0; i < b; ++i) {
      s[i] = scores[i * classes + c];
      t[i] = targets[i * classes + c];
    }
    const double ap = average_precision(s, t);
    if (std::isnan(ap)) continue;
    total += ap;
    ++counted;
  }
  if (counted == 0) throw UsageError("mean_average_precision: no class has a positive target");
  return total / static_cast<double>(counted);
}

// ---------------------------------------------------------------------------
// Adam

template <typename T>
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<T>> m, v;
};

/// One bias-corrected Adam update. A non-finite gradient skips the update and
/// returns false.
template <typename T>
bool adam_step(std::vector<Tensor<T>>& params, AdamState<T>& state) {
  for (const auto& p : params)
    for (T g : p.grad_span())
      if (!std::isfinite(g)) return false;
  if (state.m.size() != params.size()) {
    state.m.clear();
    state.v.clear();
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), T(0));
      state.v.emplace_back(p.size(), T(0));
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (state.m[k].size() != params[k].size()) throw DimensionError("adam state does not match parameter " + std::to_string(k));
    if (!params[k].has_grad()) continue;
    const auto g = params[k].grad_span();
    auto w = params[k].mutable_data();
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = state.beta1 * static_cast<double>(m[i]) + (1.0 - state.beta1) * gi;
      const double vi = state.beta2 * static_cast<double>(v[i]) + (1.0 - state.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = state.lr * (mi / c1) / (std::sqrt(vi / c2) + state.eps);
      w[i] = static_cast<T>(static_cast<double>(w[i]) - update);
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Data

/// A labelled spectrogram-shaped example, [H, W] row-major.
struct Example {
  std::vector<float> values;
  std::size_t label = 0;
};

/// Band-limited noise with one class-dependent spectral ridge. Sample i is a
/// pure function of (seed, i).
struct SyntheticTask {
  std::uint64_t seed = 0;
  std::size_t num_classes = 2;
  std::size_t height = 32;
  std::size_t width = 64;
  std::size_t size = 256;
  double ridge_amplitude = 1.5;

  std::size_t ridge_row(std::size_t label) const { return (label + 1) * height / (num_classes + 1); }

  Example sample(std::size_t index) const {
    Rng rng(seed * 0x9E3779B97F4A7C15ull + index + 1);
    Example ex;
    ex.label = index % num_classes;
    ex.values.assign(height * width, 0.0f);
    // White noise, then a 3-tap smoothing along frequency to band-limit it.
    std::vector<double> noise(height * width);
    for (auto& v : noise) v = standard_normal(rng);
    const double center = static_cast<double>(ridge_row(ex.label));
    const double width_rows = std::max(1.0, static_cast<double>(height) / 16.0);
    const double phase = uniform01(rng) * 6.283185307179586;
    for (std::size_t r = 0; r < height; ++r) {
      const double dr = (static_cast<double>(r) - center) / width_rows;
      const double ridge = ridge_amplitude * std::exp(-0.5 * dr * dr);
      for (std::size_t c = 0; c < width; ++c) {
        const double up = r > 0 ? noise[(r - 1) * width + c] : 0.0;
        const double down = r + 1 < height ? noise[(r + 1) * width + c] : 0.0;
        const double smooth = 0.5 * noise[r * width + c] + 0.25 * (up + down);
        const double modulation = 1.0 + 0.3 * std::sin(phase + 0.2 * static_cast<double>(c));
        ex.values[r * width + c] = static_cast<float>(smooth + ridge * modulation);
      }
    }
    return ex;
  }
};

/// Any indexable source of examples.
struct Dataset {
  std::size_t size = 0;
  std::size_t num_classes = 2;
  std::size_t height = 0;
  std::size_t width = 0;
  std::function<Example(std::size_t)> get;

  static Dataset from(const SyntheticTask& task) {
    return {task.size, task.num_classes, task.height, task.width, [task](std::size_t i) { return task.sample(i); }};
  }

  static Dataset from(std::vector<Example> examples, std::size_t num_classes, std::size_t height, std::size_t width) {
    const std::size_t n = examples.size();
    auto shared = std::make_shared<std::vector<Example>>(std::move(examples));
    return {n, num_classes, height, width, [shared](std::size_t i) { return (*shared)[i]; }};
  }
};

// ---------------------------------------------------------------------------
// Training loop

struct TrainRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss = 0;
  double grad_norm = 0;
  double lr = 0;
  bool nan_flag = false;

  bool operator==(const TrainRecord&) const = default;
};

enum class LossKind { bce, cross_entropy };

/// lr for (epoch, base lr).
using LrSchedule = std::function<double(std::size_t epoch, double base_lr)>;

inline LrSchedule constant_lr() {
  return [](std::size_t, double base) { return base; };
}

/// Halves the rate once `epochs` epochs have completed.
inline LrSchedule halve_after(std::size_t epochs) {
  return [epochs](std::size_t epoch, double base) { return epoch >= epochs ? 0.5 * base : base; };
}

struct TrainOptions {
  std::size_t epochs = 30;
  std::size_t max_steps = 0;  // 0: no limit
  double lr = 1e-3;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::bce;
  LrSchedule schedule = constant_lr();
  std::function<void(const TrainRecord&)> on_step;
};

template <typename T>
Tensor<T> make_batch(const Dataset& data, const std::vector<std::size_t>& indices, std::vector<std::size_t>& labels) {
  const std::size_t hw = data.height * data.width;
  std::vector<T> values(indices.size() * hw);
  labels.clear();
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const Example ex = data.get(indices[b]);
    if (ex.values.size() != hw) throw DimensionError("example " + std::to_string(indices[b]) + " has the wrong size");
    std::copy(ex.values.begin(), ex.values.end(), values.begin() + static_cast<std::ptrdiff_t>(b * hw));
    labels.push_back(ex.label);
  }
  return Tensor<T>(Shape{indices.size(), data.height, data.width, 1}, std::move(values));
}

template <typename T>
Tensor<T> training_loss(const Tensor<T>& logits, const std::vector<std::size_t>& labels, LossKind kind) {
  if (kind == LossKind::cross_entropy) return cross_entropy(logits, labels);
  const std::size_t c = logits.shape()[1];
  std::vector<T> targets(logits.size(), T(0));
  for (std::size_t b = 0; b < labels.size(); ++b) {
    if (labels[b] >= c) throw UsageError("label " + std::to_string(labels[b]) + " out of range");
    targets[b * c + labels[b]] = T(1);
  }
  return bce_loss(logits, targets);
}

/// Mini-batch Adam training. Deterministic given options.seed: the seed fixes
/// the per-epoch shuffle and the stochastic-depth draws. Non-finite steps are
/// recorded and skipped.
template <typename T>
std::vector<TrainRecord> train(FastModel<T>& model, const Dataset& data, const TrainOptions& opts) {
  if (opts.batch_size == 0 || data.size == 0) throw UsageError("train needs a non-empty dataset and batch size");
  if (data.height != model.config().image_size[0] || data.width != model.config().image_size[1]) {
    throw DimensionError("dataset examples do not match the model image size");
  }
  Rng shuffle_rng(opts.seed);
  Rng drop_rng(opts.seed ^ 0xD1B54A32D192ED03ull);
  AdamState<T> adam;
  std::vector<Tensor<T>> params;
  for (auto& p : model.parameters()) params.push_back(p.tensor);

  std::vector<TrainRecord> records;
  std::vector<std::size_t> order(data.size);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng() % i]);
    adam.lr = opts.schedule(epoch, opts.lr);

    for (std::size_t start = 0; start < order.size(); start += opts.batch_size) {
      if (opts.max_steps && step >= opts.max_steps) return records;
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(start + opts.batch_size, order.size())));
      std::vector<std::size_t> labels;
      Tensor<T> x = make_batch<T>(data, idx, labels);

      model.zero_grad();
      Tensor<T> loss = training_loss(model.forward(x, true, &drop_rng), labels, opts.loss);
      backward(loss);

      double sq = 0;
      for (const auto& p : params)
        for (T g : p.grad_span()) sq += static_cast<double>(g) * static_cast<double>(g);
      TrainRecord rec{step, epoch, static_cast<double>(loss.item()), std::sqrt(sq), adam.lr, false};
      rec.nan_flag = !std::isfinite(rec.loss) || !std::isfinite(rec.grad_norm);
      if (!rec.nan_flag) adam_step(params, adam);
      records.push_back(rec);
      if (opts.on_step) opts.on_step(rec);
      ++step;
    }
  }
  return records;
}

/// Runs `steps` optimisation steps regardless of epoch boundaries.
template <typename T>
std::vector<TrainRecord> train_steps(FastModel<T>& model, const Dataset& data, std::size_t steps, TrainOptions opts) {
  const std::size_t per_epoch = (data.size + opts.batch_size - 1) / opts.batch_size;
  opts.epochs = (steps + per_epoch - 1) / per_epoch;
  opts.max_steps = steps;
  return train(model, data, opts);
}

// ---------------------------------------------------------------------------
// Stability ablation

struct VariantRecord {
  BlockVariant variant;
  TrainRecord record;
};

struct StabilityOptions {
  std::vector<double> learning_rates{1e-3};
  std::size_t steps = 200;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  std::size_t task_size = 256;
};

/// Trains the Lipschitz and baseline variants from the same seed at every
/// learning rate. Divergence shows up as nan_flag records, not exceptions.
inline std::vector<VariantRecord> stability_experiment(const ModelConfig& cfg, const StabilityOptions& o) {
  SyntheticTask task;
  task.seed = o.seed;
  task.num_classes = cfg.num_classes;
  task.height = cfg.image_size[0];
  task.width = cfg.image_size[1];
  task.size = o.task_size;
  const Dataset data = Dataset::from(task);

  std::vector<VariantRecord> out;
  for (double lr : o.learning_rates) {
    for (BlockVariant variant : {BlockVariant::lipschitz, BlockVariant::baseline}) {
      BuildOptions bo;
      bo.seed = o.seed;
      bo.variant = variant;
      auto model = FastModel<float>::build(cfg, bo);
      TrainOptions to;
      to.lr = lr;
      to.batch_size = o.batch_size;
      to.seed = o.seed;
      for (const auto& r : train_steps(model, data, o.steps, to)) out.push_back({variant, r});
    }
  }
  return out;
}

inline constexpr const char* kTrainCsvHeader = "step,epoch,variant,lr,loss,grad_norm,nan";

inline void write_train_csv_row(std::ostream& os, const TrainRecord& r, const std::string& variant) {
  std::ostringstream line;
  line.precision(9);
  line << r.step << ',' << r.epoch << ',' << variant << ',' << r.lr << ',' << r.loss << ',' << r.grad_norm << ','
       << (r.nan_flag ? 1 : 0) << '\n';
  os << line.str();
}

inline void write_train_csv(std::ostream& os, const std::vector<VariantRecord>& rows) {
  os << kTrainCsvHeader << '\n';
  for (const auto& r : rows) write_train_csv_row(os, r.record, to_string(r.variant));
}

}  // namespace fast
