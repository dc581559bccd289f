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

// Acceptance suite: one [PASS]/[FAIL] line per criterion, exit status 1 if
// any criterion fails.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "fast/fast.hpp"

namespace {

using namespace fast;

struct Outcome {
  bool passed = true;
  std::string detail;
};

class Check {
 public:
  void expect(bool ok, const std::string& what) {
    if (!ok && failures_++ < 5) detail_ += (detail_.empty() ? "" : "; ") + what;
  }
  void note(const std::string& what) { notes_ += (notes_.empty() ? "" : "; ") + what; }
  Outcome outcome() const {
    if (failures_ == 0) return {true, notes_};
    return {false, std::to_string(failures_) + " violation(s): " + detail_ + (notes_.empty() ? "" : " | " + notes_)};
  }

 private:
  std::size_t failures_ = 0;
  std::string detail_, notes_;
};

std::string fmt(double v, const char* spec = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

double row_norm(const TensorD& t, std::size_t row, std::size_t d) {
  double s = 0;
  for (std::size_t i = 0; i < d; ++i) s += t[row * d + i] * t[row * d + i];
  return std::sqrt(s);
}

template <typename T>
bool same_bits(const FastModel<T>& a, const FastModel<T>& b) {
  const auto pa = a.parameters(), pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].name != pb[i].name || pa[i].tensor.shape() != pb[i].tensor.shape()) return false;
    for (std::size_t k = 0; k < pa[i].tensor.size(); ++k)
      if (std::bit_cast<std::uint32_t>(pa[i].tensor[k]) != std::bit_cast<std::uint32_t>(pb[i].tensor[k])) return false;
  }
  return true;
}

bool same_bits(const Tensor<float>& a, const Tensor<float>& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::bit_cast<std::uint32_t>(a[i]) != std::bit_cast<std::uint32_t>(b[i])) return false;
  return true;
}

Dataset synthetic(std::uint64_t seed, std::size_t size) {
  SyntheticTask task;
  task.seed = seed;
  task.size = size;
  return Dataset::from(task);
}

// 1 -------------------------------------------------------------------------
Outcome parameter_count() {
  Check c;
  const auto n = FastModel<float>::build(ModelConfig::reference(2)).parameter_count();
  c.expect(n >= 1600000 && n <= 2400000, "count " + std::to_string(n) + " outside [1.6M, 2.4M]");
  c.note("count " + std::to_string(n));
  return c.outcome();
}

// 2 -------------------------------------------------------------------------
Outcome gradient_suite() {
  Check c;
  const auto reports = testkit::run_gradchecks("all", 20);
  double worst_ratio = 0;
  for (const auto& r : reports) {
    c.expect(r.passed(), r.op + " error " + fmt(r.max_rel_error) + " > " + fmt(r.tolerance));
    worst_ratio = std::max(worst_ratio, r.max_rel_error / r.tolerance);
  }
  c.expect(reports.size() > 40, "only " + std::to_string(reports.size()) + " cases");
  c.note(std::to_string(reports.size()) + " cases x 20 seeds, worst error/tolerance " + fmt(worst_ratio, "%.3f"));
  return c.outcome();
}

// 3 -------------------------------------------------------------------------
Outcome center_norm_bound() {
  Check c;
  double lowest = 1.0;
  for (std::size_t d : {2u, 4u, 16u, 64u}) {
    Rng rng(1000 + d);
    const double factor = static_cast<double>(d) / static_cast<double>(d - 1);
    for (int trial = 0; trial < 10; ++trial) {
      std::vector<double> gamma(d);
      for (auto& g : gamma) g = 4.0 * uniform01(rng) - 2.0;
      auto p = CenterNormParams<double>::create(d);
      std::copy(gamma.begin(), gamma.end(), p.gamma.mutable_data().begin());
      double gmax = 0;
      for (double g : gamma) gmax = std::max(gmax, std::abs(g));

      std::vector<double> jac(d * d);
      for (std::size_t r = 0; r < d; ++r)
        for (std::size_t k = 0; k < d; ++k) jac[r * d + k] = gamma[r] * factor * ((r == k ? 1.0 : 0.0) - 1.0 / static_cast<double>(d));
      const double sigma = testkit::spectral_norm(jac, d, d);
      const std::string tag = "D=" + std::to_string(d) + " trial " + std::to_string(trial);
      c.expect(sigma <= factor * gmax + 1e-9, tag + " spectral norm " + fmt(sigma) + " > " + fmt(factor * gmax));

      testkit::VectorMap f = [p](const std::vector<double>& x) {
        NoGradGuard no_grad;
        auto y = center_norm(TensorD({x.size()}, x), p);
        return std::vector<double>(y.data().begin(), y.data().end());
      };
      const double est = testkit::empirical_lipschitz(f, testkit::mixed_sparse_pairs(d), 10000, rng);
      c.expect(est <= sigma + 1e-9, tag + " estimate " + fmt(est) + " exceeds spectral norm " + fmt(sigma));
      c.expect(est >= 0.95 * sigma, tag + " estimate reaches only " + fmt(est / sigma, "%.4f") + " of the spectral norm");
      lowest = std::min(lowest, est / sigma);
    }
  }
  c.note("lowest estimate/spectral norm " + fmt(lowest, "%.4f"));
  return c.outcome();
}

// 4 -------------------------------------------------------------------------
Outcome scsa_bounded() {
  Check c;
  const std::size_t n = 6, d = 16, heads = 4;
  const double magnitudes[] = {1e-3, 1.0, 1e3, 1e6};
  double worst_out = 0, worst_qkv = 0, worst_sum = 0, weakest_base = 1e300;
  std::size_t huge_inputs = 0;
  for (int i = 0; i < 1000; ++i) {
    Initializer init(static_cast<std::uint64_t>(i / 100));
    const double nu = 0.5 + 0.1 * static_cast<double>(i / 100);
    const auto p = ScsaParams<double>::create(d, heads, init, 5.0, nu);
    Rng rng(static_cast<std::uint64_t>(i) + 1);
    const double m = magnitudes[i % 4];
    const auto x = testkit::random_tensor({n, d}, rng, -m, m);
    NoGradGuard no_grad;
    AttentionTrace<double> trace;
    const auto y = scsa(x, p, &trace);
    for (std::size_t r = 0; r < n; ++r) {
      const double norm = row_norm(y, r, d);
      worst_out = std::max(worst_out, norm / nu);
      c.expect(norm <= nu + 1e-9, "input " + std::to_string(i) + " output row norm " + fmt(norm) + " > nu " + fmt(nu));
    }
    for (const auto* t : {&trace.q, &trace.k, &trace.v}) {
      for (std::size_t r = 0; r < t->size() / (d / heads); ++r) {
        const double norm = row_norm(*t, r, d / heads);
        worst_qkv = std::max(worst_qkv, norm);
        c.expect(norm < 1.0, "input " + std::to_string(i) + " q/k/v row norm " + fmt(norm, "%.17g"));
      }
    }
    for (std::size_t r = 0; r < trace.attention.size() / n; ++r) {
      double s = 0;
      for (std::size_t k = 0; k < n; ++k) s += trace.attention[r * n + k];
      worst_sum = std::max(worst_sum, std::abs(s - 1.0));
      c.expect(std::abs(s - 1.0) <= 1e-6, "input " + std::to_string(i) + " attention row sums to " + fmt(s, "%.12g"));
    }
    if (m == 1e6) {
      ++huge_inputs;
      const auto base = dot_product_attention(x, p);
      double peak = 0;
      for (std::size_t r = 0; r < n; ++r) peak = std::max(peak, row_norm(base, r, d));
      weakest_base = std::min(weakest_base, peak / nu);
      c.expect(peak > 10.0 * nu, "input " + std::to_string(i) + " dot-product output norm only " + fmt(peak));
    }
  }
  c.note("max output/nu " + fmt(worst_out, "%.6f") + ", max q/k/v norm " + fmt(worst_qkv, "%.17g") + ", max |rowsum-1| " +
         fmt(worst_sum, "%.2e") + ", dot-product peak/nu >= " + fmt(weakest_base, "%.3g") + " on " +
         std::to_string(huge_inputs) + " inputs at 1e6");
  return c.outcome();
}

// 5 -------------------------------------------------------------------------
Outcome structural_identities() {
  Check c;
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const PatchSize patch{1 + rng() % 4, 1 + rng() % 4};
    const std::size_t b = 1 + rng() % 3, h = patch.h * (1 + rng() % 5), w = patch.w * (1 + rng() % 5), d = 1 + rng() % 6;
    const auto x = testkit::random_tensor({b, h, w, d}, rng, -1e3, 1e3);
    const auto y = fold(unfold(x, patch), patch, h, w);
    bool same = y.shape() == x.shape();
    for (std::size_t i = 0; same && i < x.size(); ++i) same = std::bit_cast<std::uint64_t>(x[i]) == std::bit_cast<std::uint64_t>(y[i]);
    c.expect(same, "fold(unfold) differs for shape " + to_string(x.shape()) + " patch " + std::to_string(patch.h) + "x" +
                       std::to_string(patch.w));
  }

  const auto x = testkit::random_tensor({4, 7, 8}, rng);
  const auto f = testkit::random_tensor({4, 7, 8}, rng, -1e4, 1e4);
  Rng drop(9);
  for (bool training : {false, true}) {
    const auto y = weighted_residual(x, f, WrsParams<double>::create(8, 0.0, 0.5), training, &drop);
    bool same = true;
    for (std::size_t i = 0; i < x.size(); ++i) same = same && y[i] == x[i];
    c.expect(same, std::string("alpha=0 residual is not the identity (training=") + (training ? "true)" : "false)"));
  }
  Rng untouched(9), probe(9);
  const auto kept = drop_path(f, 0.0, true, &probe);
  bool same = true;
  for (std::size_t i = 0; i < f.size(); ++i) same = same && kept[i] == f[i];
  c.expect(same, "drop_path with prob 0 is not the identity");
  c.expect(probe() == untouched(), "drop_path with prob 0 consumed random draws");

  BuildOptions o;
  o.seed = 21;
  const auto model = FastModel<float>::build(ModelConfig::tiny(), o);
  const auto path = (std::filesystem::temp_directory_path() / "fast_acceptance.fstc").string();
  save_checkpoint(model, path);
  const auto loaded = load_model<float>(ModelConfig::tiny(), path);
  std::filesystem::remove(path);
  c.expect(same_bits(model, loaded), "checkpoint round trip changed parameter bits");
  c.note("100 fold/unfold shapes, checkpoint of " + std::to_string(model.parameter_count()) + " parameters");
  return c.outcome();
}

// 6 -------------------------------------------------------------------------
Outcome training_smoke() {
  Check c;
  const auto data = synthetic(0, 256);
  {
    auto model = FastModel<float>::build(ModelConfig::tiny());
    TrainOptions o;
    o.lr = 1e-3;
    o.seed = 0;
    const auto r = train_steps(model, data, 200, o);
    c.expect(r.size() == 200, "expected 200 records, got " + std::to_string(r.size()));
    double first = 0, last = 0;
    std::size_t nans = 0;
    for (std::size_t i = 0; i < 20; ++i) {
      first += r[i].loss / 20;
      last += r[r.size() - 20 + i].loss / 20;
    }
    for (const auto& rec : r) nans += rec.nan_flag;
    c.expect(last < 0.5 * first, "final mean BCE " + fmt(last) + " not below half of initial " + fmt(first));
    c.expect(nans == 0, std::to_string(nans) + " non-finite steps at lr 1e-3");
    c.note("BCE " + fmt(first, "%.4f") + " -> " + fmt(last, "%.4f"));
  }
  {
    BuildOptions bo;
    bo.variant = BlockVariant::lipschitz;
    auto model = FastModel<float>::build(ModelConfig::tiny(), bo);
    TrainOptions o;
    o.lr = 1e-2;
    o.seed = 0;
    const auto r = train_steps(model, data, 500, o);
    std::size_t nans = 0;
    for (const auto& rec : r) nans += rec.nan_flag;
    c.expect(r.size() == 500, "expected 500 records, got " + std::to_string(r.size()));
    c.expect(nans == 0, std::to_string(nans) + " non-finite steps at lr 1e-2");
    c.note("lips lr 1e-2: " + std::to_string(nans) + " non-finite of " + std::to_string(r.size()));
  }
  return c.outcome();
}

// 7 -------------------------------------------------------------------------
Outcome metric_oracles() {
  Check c;
  auto bits = [](unsigned v) { return std::vector<int>{int(v & 1), int(v >> 1 & 1), int(v >> 2 & 1), int(v >> 3 & 1)}; };
  for (unsigned p = 0; p < 16; ++p)
    for (unsigned l = 0; l < 16; ++l) {
      const double got = f1_binary(bits(p), bits(l)), want = testkit::f1_reference(bits(p), bits(l));
      c.expect(got == want, "f1 pattern " + std::to_string(p) + "/" + std::to_string(l) + ": " + fmt(got) + " vs " + fmt(want));
    }

  Rng rng(7);
  double worst_map = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t b = 2 + rng() % 9, classes = 1 + rng() % 4;
    std::vector<double> s(b * classes);
    std::vector<int> t(b * classes);
    for (auto& v : s) v = std::round(uniform01(rng) * 10) / 10;
    for (auto& v : t) v = static_cast<int>(rng() % 2);
    t[0] = 1;
    const double err = std::abs(mean_average_precision(s, t, classes) - testkit::map_reference(s, t, classes));
    worst_map = std::max(worst_map, err);
    c.expect(err <= 1e-9, "mAP trial " + std::to_string(trial) + " off by " + fmt(err));
  }

  double worst_bce = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto z = testkit::random_tensor({1 + rng() % 6, 1 + rng() % 4}, rng, -30, 30);
    std::vector<double> t(z.size());
    for (auto& v : t) v = static_cast<double>(rng() % 2);
    NoGradGuard no_grad;
    const double err = std::abs(bce_loss(z, t).item() - testkit::bce_reference(std::vector<double>(z.data().begin(), z.data().end()), t));
    worst_bce = std::max(worst_bce, err);
    c.expect(err <= 1e-9, "bce trial " + std::to_string(trial) + " off by " + fmt(err));
  }
  c.note("256 F1 patterns, max mAP error " + fmt(worst_map, "%.1e") + ", max BCE error " + fmt(worst_bce, "%.1e"));
  return c.outcome();
}

// 8 -------------------------------------------------------------------------
Outcome determinism() {
  Check c;
  const auto cfg = ModelConfig::tiny();
  BuildOptions bo;
  bo.seed = 17;
  c.expect(same_bits(FastModel<float>::build(cfg, bo), FastModel<float>::build(cfg, bo)), "initialization differs between runs");
  BuildOptions other = bo;
  other.seed = 18;
  c.expect(!same_bits(FastModel<float>::build(cfg, bo), FastModel<float>::build(cfg, other)), "seed has no effect on initialization");

  const auto data = synthetic(3, 64);
  auto run = [&] {
    auto model = FastModel<float>::build(cfg, bo);
    TrainOptions o;
    o.seed = 17;
    o.batch_size = 8;
    auto records = train_steps(model, data, 20, o);
    Rng rng(23);
    const auto x = testkit::random_tensor({3, 32, 64, 1}, rng).cast<float>();
    NoGradGuard no_grad;
    return std::make_pair(std::move(records), model.forward(x));
  };
  const auto a = run(), b = run();
  bool records_equal = a.first.size() == b.first.size();
  for (std::size_t i = 0; records_equal && i < a.first.size(); ++i) {
    const auto &ra = a.first[i], &rb = b.first[i];
    records_equal = ra.step == rb.step && ra.epoch == rb.epoch && ra.nan_flag == rb.nan_flag &&
                    std::bit_cast<std::uint64_t>(ra.loss) == std::bit_cast<std::uint64_t>(rb.loss) &&
                    std::bit_cast<std::uint64_t>(ra.grad_norm) == std::bit_cast<std::uint64_t>(rb.grad_norm) &&
                    std::bit_cast<std::uint64_t>(ra.lr) == std::bit_cast<std::uint64_t>(rb.lr);
  }
  c.expect(records_equal, "training records differ between runs");
  c.expect(same_bits(a.second, b.second), "eval outputs differ between runs");
  c.note("20 training steps and eval on 3 inputs repeated bit-exactly");
  return c.outcome();
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "reference parameter count", 5, parameter_count},
      {2, "finite-difference gradient suite", 120, gradient_suite},
      {3, "CenterNorm Lipschitz bound", 0, center_norm_bound},
      {4, "SCSA boundedness", 0, scsa_bounded},
      {5, "structural identities", 0, structural_identities},
      {6, "training smoke", 300, training_smoke},
      {7, "metric oracles", 0, metric_oracles},
      {8, "determinism", 0, determinism},
  };
  int failed = 0;
  for (const auto& cr : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = cr.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (cr.budget_s > 0 && secs > cr.budget_s) {
      o.passed = false;
      o.detail += (o.detail.empty() ? "" : "; ") + std::string("runtime over ") + fmt(cr.budget_s, "%.0f") + " s";
    }
    failed += !o.passed;
    std::printf("[%s] %d %s (%.1f s)%s%s\n", o.passed ? "PASS" : "FAIL", cr.id, cr.name, secs, o.detail.empty() ? "" : ": ",
                o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - static_cast<std::size_t>(failed), criteria.size());
  return failed == 0 ? 0 : 1;
}
