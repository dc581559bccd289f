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

// fast: command-line front end for the fastaudio library.
//
//   fast params     --config model.json
//   fast infer      --config model.json [--checkpoint w.fstc] --wav a.wav b.wav
//   fast train      --config model.json (--data dir | --synthetic) [--save w.fstc]
//   fast gradcheck  --module lipschitz-blocks
//   fast stability  --steps 200 --lrs 0.001,0.01
//   fast bench      --config model.json --iterations 100
//
// Exit codes: 0 success, 1 check failure, 2 usage or configuration error.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fast/fast.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;

struct ModelArgs {
  std::string config_path;
  std::string preset;
  std::string variant = "lips";
  std::uint64_t seed = 0;
};

void add_model_args(CLI::App* cmd, ModelArgs& a, bool preset_default_tiny) {
  cmd->add_option("--config", a.config_path, "Model configuration JSON");
  cmd->add_option("--preset", a.preset, "Built-in configuration instead of --config")
      ->check(CLI::IsMember({"reference", "tiny"}))
      ->excludes(cmd->get_option("--config"));
  cmd->add_option("--variant", a.variant, "Transformer block variant")->check(CLI::IsMember({"lips", "base"}))->capture_default_str();
  cmd->add_option("--seed", a.seed, "Seed for initialisation and training")->capture_default_str();
  if (preset_default_tiny) a.preset = "tiny";
}

fast::ModelConfig resolve_config(const ModelArgs& a) {
  if (!a.config_path.empty()) return fast::load_model_config(a.config_path);
  if (a.preset == "reference") return fast::ModelConfig::reference();
  if (a.preset == "tiny") return fast::ModelConfig::tiny();
  throw fast::UsageError("one of --config or --preset is required");
}

fast::BuildOptions build_options(const ModelArgs& a) {
  fast::BuildOptions o;
  o.seed = a.seed;
  o.variant = a.variant == "base" ? fast::BlockVariant::baseline : fast::BlockVariant::lipschitz;
  return o;
}

fast::SpectrogramConfig spectrogram_for(const fast::ModelConfig& cfg) {
  fast::SpectrogramConfig s;
  s.n_mels = cfg.image_size[0];
  s.target_frames = cfg.image_size[1];
  return s;
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw fast::UsageError("cannot parse '" + item + "' as a number");
    }
  }
  if (out.empty()) throw fast::UsageError("empty number list");
  return out;
}

std::string fmt(double v, int precision = 9) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

class OutputSink {
 public:
  explicit OutputSink(const std::string& path) {
    if (path.empty() || path == "-") return;
    file_ = std::make_unique<std::ofstream>(path, std::ios::binary);
    if (!*file_) throw fast::UsageError("cannot open output file '" + path + "'");
  }
  std::ostream& stream() { return file_ ? *file_ : std::cout; }

 private:
  std::unique_ptr<std::ofstream> file_;
};

// ---------------------------------------------------------------------------

int run_params(const ModelArgs& a) {
  const auto model = fast::FastModel<float>::build(resolve_config(a), build_options(a));
  std::cout << "layer,parameters\n";
  for (const auto& row : model.layer_summary()) std::cout << row.name << ',' << row.parameters << '\n';
  std::cout << "total," << model.parameter_count() << '\n';
  return kExitOk;
}

int run_infer(const ModelArgs& a, const std::string& checkpoint, const std::vector<std::string>& wavs, const std::string& head) {
  const auto cfg = resolve_config(a);
  auto model = fast::FastModel<float>::build(cfg, build_options(a));
  if (!checkpoint.empty()) fast::load_checkpoint(model, checkpoint);
  const auto spec = spectrogram_for(cfg);

  std::cout << "path";
  for (std::size_t c = 0; c < cfg.num_classes; ++c) std::cout << ",score_" << c;
  std::cout << '\n';
  fast::NoGradGuard no_grad;
  for (const auto& path : wavs) {
    const auto s = fast::mel_spectrogram(fast::load_wav(path), spec);
    const auto x = fast::reshape(s.values, fast::Shape{1, cfg.image_size[0], cfg.image_size[1], 1});
    auto logits = model.forward(x);
    auto scores = head == "softmax" ? fast::softmax(logits) : fast::sigmoid(logits);
    std::cout << path;
    for (float v : scores.data()) std::cout << ',' << fmt(v);
    std::cout << '\n';
  }
  return kExitOk;
}

fast::Dataset load_directory(const std::string& root, const fast::ModelConfig& cfg) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw fast::UsageError("data directory '" + root + "' does not exist");
  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory()) class_dirs.push_back(entry.path());
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.size() != cfg.num_classes) {
    throw fast::ConfigError("data directory has " + std::to_string(class_dirs.size()) + " class folders, config has num_classes " +
                            std::to_string(cfg.num_classes));
  }
  const auto spec = spectrogram_for(cfg);
  std::vector<fast::Example> examples;
  for (std::size_t label = 0; label < class_dirs.size(); ++label) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(class_dirs[label]))
      if (entry.is_regular_file() && entry.path().extension() == ".wav") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      const auto s = fast::mel_spectrogram(fast::load_wav(f.string()), spec);
      examples.push_back({std::vector<float>(s.values.data().begin(), s.values.data().end()), label});
    }
  }
  if (examples.empty()) throw fast::UsageError("no .wav files found under '" + root + "'");
  return fast::Dataset::from(std::move(examples), cfg.num_classes, cfg.image_size[0], cfg.image_size[1]);
}

struct TrainArgs {
  std::string data;
  bool synthetic = false;
  std::size_t synthetic_size = 256;
  std::size_t epochs = 30;
  std::size_t steps = 0;
  double lr = 1e-3;
  std::size_t batch_size = 16;
  std::size_t halve_after = 0;
  std::string loss = "bce";
  std::string save;
  std::string output;
};

int run_train(const ModelArgs& a, const TrainArgs& t) {
  const auto cfg = resolve_config(a);
  fast::Dataset data;
  if (t.synthetic) {
    fast::SyntheticTask task;
    task.seed = a.seed;
    task.num_classes = cfg.num_classes;
    task.height = cfg.image_size[0];
    task.width = cfg.image_size[1];
    task.size = t.synthetic_size;
    data = fast::Dataset::from(task);
  } else {
    data = load_directory(t.data, cfg);
  }
  auto model = fast::FastModel<float>::build(cfg, build_options(a));
  fast::TrainOptions o;
  o.epochs = t.epochs;
  o.max_steps = t.steps;
  o.lr = t.lr;
  o.batch_size = t.batch_size;
  o.seed = a.seed;
  o.loss = t.loss == "ce" ? fast::LossKind::cross_entropy : fast::LossKind::bce;
  if (t.halve_after > 0) o.schedule = fast::halve_after(t.halve_after);

  OutputSink sink(t.output);
  sink.stream() << fast::kTrainCsvHeader << '\n';
  o.on_step = [&](const fast::TrainRecord& r) { fast::write_train_csv_row(sink.stream(), r, a.variant); };
  fast::train(model, data, o);
  if (!t.save.empty()) fast::save_checkpoint(model, t.save);
  return kExitOk;
}

int run_gradcheck(const std::string& module, std::size_t seeds, std::uint64_t first_seed, std::optional<double> tolerance) {
  auto reports = fast::testkit::run_gradchecks(module, seeds, first_seed);
  if (tolerance)
    for (auto& r : reports) r.tolerance = *tolerance;
  std::cout << "op,seeds,max_rel_error,tolerance,status\n";
  std::vector<std::string> failures;
  for (const auto& r : reports) {
    std::cout << r.op << ',' << seeds << ',' << fmt(r.max_rel_error, 6) << ',' << fmt(r.tolerance, 6) << ','
              << (r.passed() ? "pass" : "fail") << '\n';
    if (!r.passed()) failures.push_back(r.op);
  }
  for (const auto& f : failures) std::cerr << "gradient check failed: " << f << '\n';
  return failures.empty() ? kExitOk : kExitCheckFailed;
}

int run_stability(const ModelArgs& a, std::size_t steps, const std::string& lrs, std::size_t batch_size, std::size_t task_size,
                  const std::string& output) {
  fast::StabilityOptions o;
  o.learning_rates = parse_list(lrs);
  o.steps = steps;
  o.batch_size = batch_size;
  o.seed = a.seed;
  o.task_size = task_size;
  const auto rows = fast::stability_experiment(resolve_config(a), o);
  OutputSink sink(output);
  fast::write_train_csv(sink.stream(), rows);
  return kExitOk;
}

int run_bench(const ModelArgs& a, std::size_t iterations, std::size_t warmup) {
  if (iterations == 0) throw fast::UsageError("--iterations must be positive");
  const auto cfg = resolve_config(a);
  const auto model = fast::FastModel<float>::build(cfg, build_options(a));
  fast::Rng rng(a.seed);
  std::vector<float> values(cfg.image_size[0] * cfg.image_size[1]);
  for (auto& v : values) v = static_cast<float>(fast::standard_normal(rng));
  const fast::TensorF x(fast::Shape{1, cfg.image_size[0], cfg.image_size[1], 1}, std::move(values));

  fast::NoGradGuard no_grad;
  for (std::size_t i = 0; i < warmup; ++i) model.forward(x);
  std::vector<double> ms;
  for (std::size_t i = 0; i < iterations; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    model.forward(x);
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  double mean = 0;
  for (double v : ms) mean += v;
  mean /= static_cast<double>(ms.size());
  std::sort(ms.begin(), ms.end());
  const std::size_t rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(ms.size())));
  const double p95 = ms[std::max<std::size_t>(rank, 1) - 1];
  std::cout << "metric,value\n";
  std::cout << "iterations," << iterations << '\n';
  std::cout << "mean_ms," << fmt(mean, 6) << '\n';
  std::cout << "p95_ms," << fmt(p95, 6) << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fastaudio: Lipschitz MobileViT audio classifier"};
  app.require_subcommand(1);

  ModelArgs params_args, infer_args, train_args, bench_args, stability_args;

  auto* params = app.add_subcommand("params", "Print the parameter count and a per-layer table");
  add_model_args(params, params_args, false);

  auto* infer = app.add_subcommand("infer", "Score WAV files; one CSV row per file");
  add_model_args(infer, infer_args, false);
  std::string checkpoint, head = "sigmoid";
  std::vector<std::string> wavs;
  infer->add_option("--checkpoint", checkpoint, "Weights saved by train (random init when omitted)");
  infer->add_option("--wav", wavs, "Input WAV files")->required();
  infer->add_option("--head", head, "Score transform")->check(CLI::IsMember({"sigmoid", "softmax"}))->capture_default_str();

  auto* train = app.add_subcommand("train", "Train with Adam and stream TrainRecord CSV");
  add_model_args(train, train_args, false);
  TrainArgs t;
  auto* data_opt = train->add_option("--data", t.data, "Directory of <class>/*.wav folders");
  train->add_flag("--synthetic", t.synthetic, "Use the synthetic ridge task")->excludes(data_opt);
  train->add_option("--synthetic-size", t.synthetic_size, "Examples in the synthetic task")->capture_default_str();
  train->add_option("--epochs", t.epochs, "Epochs")->capture_default_str();
  train->add_option("--steps", t.steps, "Stop after this many steps (0: no limit)")->capture_default_str();
  train->add_option("--lr", t.lr, "Learning rate")->capture_default_str();
  train->add_option("--batch-size", t.batch_size, "Batch size")->capture_default_str();
  train->add_option("--halve-after", t.halve_after, "Halve the learning rate after this many epochs (0: never)");
  train->add_option("--loss", t.loss, "Loss")->check(CLI::IsMember({"bce", "ce"}))->capture_default_str();
  train->add_option("--save", t.save, "Write the trained weights here");
  train->add_option("--output", t.output, "CSV destination (default stdout)");

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  std::string module = "all";
  std::size_t seeds = 20;
  std::uint64_t first_seed = 0;
  gradcheck->add_option("--module", module, "tensor-autodiff, lipschitz-blocks, mobilevit-blocks, model or all")->capture_default_str();
  gradcheck->add_option("--seeds", seeds, "Seeds per check")->capture_default_str();
  gradcheck->add_option("--seed", first_seed, "First seed")->capture_default_str();
  std::optional<double> tolerance;
  gradcheck->add_option("--tolerance", tolerance, "Override every check's tolerance");

  auto* stability = app.add_subcommand("stability", "Train both block variants per learning rate; CSV output");
  add_model_args(stability, stability_args, true);
  std::size_t stab_steps = 200, stab_batch = 16, stab_task = 256;
  std::string lrs = "0.001";
  std::string stab_output;
  stability->add_option("--steps", stab_steps, "Steps per run")->capture_default_str();
  stability->add_option("--lrs", lrs, "Comma-separated learning rates")->capture_default_str();
  stability->add_option("--batch-size", stab_batch, "Batch size")->capture_default_str();
  stability->add_option("--task-size", stab_task, "Synthetic examples")->capture_default_str();
  stability->add_option("--output", stab_output, "CSV destination (default stdout)");

  auto* bench = app.add_subcommand("bench", "Single-sample forward latency");
  add_model_args(bench, bench_args, false);
  std::size_t iterations = 100, warmup = 5;
  bench->add_option("--iterations", iterations, "Timed forwards")->capture_default_str();
  bench->add_option("--warmup", warmup, "Untimed forwards first")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*params) return run_params(params_args);
    if (*infer) return run_infer(infer_args, checkpoint, wavs, head);
    if (*train) {
      if (!t.synthetic && t.data.empty()) throw fast::UsageError("train needs --data or --synthetic");
      return run_train(train_args, t);
    }
    if (*gradcheck) return run_gradcheck(module, seeds, first_seed, tolerance);
    if (*stability) return run_stability(stability_args, stab_steps, lrs, stab_batch, stab_task, stab_output);
    if (*bench) return run_bench(bench_args, iterations, warmup);
  } catch (const fast::ParseError& e) {
    std::cerr << "error: " << e.what() << " (field " << e.field() << ", byte offset " << e.offset() << ")\n";
    return kExitUsage;
  } catch (const fast::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
