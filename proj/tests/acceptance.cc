//
// Copyright 2026 The MIA Audit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any of them fails.
//
//   acceptance [work_dir]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "absl/strings/str_format.h"
#include "absl/strings/str_split.h"
#include "gradient_check.h"
#include "mia/attack.h"
#include "mia/audit.h"
#include "mia/blackbox.h"
#include "mia/metrics.h"
#include "mia/mitigation.h"
#include "mia/models.h"
#include "mia/numerics.h"

namespace mia {
namespace {

namespace fs = std::filesystem;

// Desk-scale overfit setup: 600 binary features, 50 classes, 6000 records,
// 1000 target training records, 10 shadows on the real pool.
constexpr char kOverfitBase[] =
    "seed = 7\n"
    "corpus.source = synthetic\n"
    "corpus.dimension = 600\n"
    "corpus.classes = 50\n"
    "corpus.per_class = 120\n"
    "corpus.flip_prob = 0.4\n"
    "split.train_size = 1000\n"
    "target.learning_rate = 0.2\n"
    "target.epochs = 100\n"
    "target.batch_size = 32\n"
    "shadow.count = 10\n"
    "attack.learning_rate = 0.1\n"
    "attack.epochs = 100\n";

constexpr char kTwoClass[] =
    "seed = 2\n"
    "corpus.dimension = 40\n"
    "corpus.classes = 2\n"
    "corpus.per_class = 5000\n"
    "corpus.flip_prob = 0.3\n"
    "split.train_size = 3000\n"
    "target.hidden = 16\n"
    "target.learning_rate = 0.05\n"
    "target.epochs = 30\n"
    "shadow.count = 4\n"
    "attack.learning_rate = 0.1\n"
    "attack.epochs = 100\n";

fs::path g_work;
int g_failures = 0;

void Report(int n, bool pass, const std::string& detail) {
  if (!pass) ++g_failures;
  std::printf("%s criterion %d: %s\n", pass ? "PASS" : "FAIL", n,
              detail.c_str());
  std::fflush(stdout);
}

std::string R(std::optional<double> v) { return FormatRate(v); }

std::optional<RunConfig> Config(const std::string& text, const std::string& run) {
  absl::StatusOr<RunConfig> c =
      ParseRunConfig(text + "out = " + (g_work / run).string() + "\n");
  if (!c.ok()) {
    std::fprintf(stderr, "config %s: %s\n", run.c_str(),
                 std::string(c.status().message()).c_str());
    return std::nullopt;
  }
  return *std::move(c);
}

std::optional<AuditResult> Audit(const std::string& text, const std::string& run,
                                 const AuditOptions& options = {}) {
  std::optional<RunConfig> c = Config(text, run);
  if (!c) return std::nullopt;
  std::fprintf(stderr, "running %s\n", run.c_str());
  AuditResult r = RunAudit(*c, options);
  if (!r.status.ok()) {
    std::fprintf(stderr, "run %s failed: %s\n", run.c_str(),
                 std::string(r.status.message()).c_str());
    return std::nullopt;
  }
  return r;
}

std::string Slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::map<std::string, std::string> SummaryRow(const fs::path& run) {
  std::istringstream in(Slurp(run / "metrics" / "summary.csv"));
  std::string header, values;
  std::getline(in, header);
  std::getline(in, values);
  std::vector<std::string> h = absl::StrSplit(header, ',');
  std::vector<std::string> v = absl::StrSplit(values, ',');
  std::map<std::string, std::string> row;
  for (std::size_t i = 0; i < h.size() && i < v.size(); ++i) row[h[i]] = v[i];
  return row;
}

// Pooled precision over verdicts whose class holds at least `min_share` of
// the target training set.
std::optional<double> PooledPrecision(const AuditResult& r, double min_share) {
  std::vector<std::size_t> train_count(r.evaluation->per_class.size(), 0);
  for (std::size_t i : r.split.target_train) ++train_count[r.corpus[i].label];
  const double floor = min_share * static_cast<double>(r.split.target_train.size());
  std::size_t tp = 0, fp = 0;
  for (const EvaluatedVerdict& v : r.verdicts) {
    if (static_cast<double>(train_count[v.true_label]) < floor) continue;
    if (v.verdict.decision != Membership::kIn) continue;
    (*v.truth == Membership::kIn ? tp : fp) += 1;
  }
  if (tp + fp == 0) return std::nullopt;
  return static_cast<double>(tp) / static_cast<double>(tp + fp);
}

double Or(std::optional<double> v, double fallback) { return v.value_or(fallback); }

void OverfitLeakage(const std::optional<AuditResult>& r, double seconds) {
  if (!r) return Report(1, false, "overfit audit did not complete");
  const std::optional<double> median = MedianClassPrecision(*r->evaluation);
  const std::optional<double> recall = r->evaluation->overall.recall();
  const bool pass = r->target_train_accuracy >= 0.95 &&
                    r->target_test_accuracy <= 0.75 && Or(median, 0) >= 0.65 &&
                    Or(recall, 0) >= 0.80 && seconds <= 600.0;
  Report(1, pass,
         absl::StrFormat("train %.4f (>= 0.95) test %.4f (<= 0.75) median class "
                         "precision %s (>= 0.65) recall %s (>= 0.80) runtime "
                         "%.1fs (<= 600)",
                         r->target_train_accuracy, r->target_test_accuracy,
                         R(median), R(recall), seconds));
}

void NonOverfitNull() {
  std::optional<AuditResult> r = Audit(kTwoClass, "c2_two_class");
  if (!r) return Report(2, false, "two-class audit did not complete");
  const double gap = r->target_train_accuracy - r->target_test_accuracy;
  const std::optional<double> precision = r->evaluation->overall.precision();
  const bool pass = gap <= 0.02 && Or(precision, 0) >= 0.45 &&
                    Or(precision, 1) <= 0.58;
  Report(2, pass,
         absl::StrFormat("gap %.4f (<= 0.02) precision %s (in [0.45, 0.58])", gap,
                         R(precision)));
}

void ClassCount() {
  std::vector<std::optional<double>> medians;
  std::string detail;
  for (int k : {2, 10, 50}) {
    std::optional<AuditResult> r =
        Audit(absl::StrFormat("%scorpus.recluster = %d\n", kOverfitBase, k),
              absl::StrFormat("c3_recluster_%d", k));
    if (!r) return Report(3, false, absl::StrFormat("recluster %d failed", k));
    medians.push_back(MedianClassPrecision(*r->evaluation));
    detail += absl::StrFormat("%d classes %s, ", k, R(medians.back()));
  }
  const double m2 = Or(medians[0], 0), m10 = Or(medians[1], 0),
               m50 = Or(medians[2], 0);
  const bool pass = medians[0] && medians[1] && medians[2] && m2 <= m10 &&
                    m10 <= m50 && m50 - m2 >= 0.10;
  Report(3, pass,
         detail + absl::StrFormat("nondecreasing, difference %.4f (>= 0.10)",
                                  m50 - m2));
}

void NoisyShadows(const std::optional<AuditResult>& real) {
  if (!real) return Report(4, false, "real-data audit did not complete");
  std::optional<AuditResult> n10 = Audit(
      std::string(kOverfitBase) + "shadow.method = noisy\nshadow.noise = 0.1\n",
      "c4_noise_10");
  std::optional<AuditResult> n20 = Audit(
      std::string(kOverfitBase) + "shadow.method = noisy\nshadow.noise = 0.2\n",
      "c4_noise_20");
  if (!n10 || !n20) return Report(4, false, "noisy audit did not complete");
  const std::optional<double> p0 = real->evaluation->overall.precision();
  const std::optional<double> p10 = n10->evaluation->overall.precision();
  const std::optional<double> p20 = n20->evaluation->overall.precision();
  const bool pass = p0 && p10 && p20 && std::abs(*p10 - *p0) <= 0.05 &&
                    *p20 <= *p10 + 0.02 && *p20 >= 0.55;
  Report(4, pass,
         absl::StrFormat("real %s, 10%% noise %s (within 0.05), 20%% noise %s "
                         "(<= 10%% + 0.02, >= 0.55)",
                         R(p0), R(p10), R(p20)));
}

void ModelSynthesis(const std::optional<AuditResult>& real) {
  if (!real) return Report(5, false, "real-data audit did not complete");
  const std::string text = std::string(kOverfitBase) +
                           "shadow.method = model_synthesis\n"
                           "shadow.records = 4000\n"
                           "synthesis.conf_min = 0.95\n";
  std::optional<RunConfig> config = Config(text, "c5_synthesis");
  if (!config) return Report(5, false, "bad synthesis config");
  std::optional<AuditResult> r = Audit(text, "c5_synthesis");
  if (!r) return Report(5, false, "synthesis audit did not complete");

  std::size_t valid = 0;
  for (const DataRecord& record : r->shadow_data) {
    absl::StatusOr<PredictionVector> p = Predict(*r->target_model, record.features);
    if (!p.ok()) continue;
    const std::size_t top = ArgMax(*p);
    if (static_cast<int>(top) == record.label &&
        (*p)[top] >= config->synthesis.conf_min) {
      ++valid;
    }
  }
  const std::optional<double> p_real = PooledPrecision(*real, 0.02);
  const std::optional<double> p_syn = PooledPrecision(*r, 0.02);
  const bool pass = !r->shadow_data.empty() && valid == r->shadow_data.size() &&
                    p_real && p_syn && *p_syn >= *p_real - 0.10;
  Report(5, pass,
         absl::StrFormat("synthetic precision %s vs real %s (>= real - 0.10) on "
                         "classes with >= 2%% of train; %zu/%zu synthesized "
                         "records satisfy argmax and conf_min",
                         R(p_syn), R(p_real), valid, r->shadow_data.size()));
}

void MitigationSweep() {
  std::optional<RunConfig> c =
      Config(std::string(kOverfitBase) +
                 "sweep.filters = none, label_only\n"
                 "sweep.lambdas = 0, 0.001, 0.05\n",
             "c6_sweep");
  if (!c) return Report(6, false, "bad sweep config");
  std::fprintf(stderr, "running c6_sweep\n");
  const SweepReport report = RunMitigationSweep(*c);
  auto find = [&](FilterKind kind, double lambda) -> const SweepRow* {
    for (const SweepRow& row : report.rows) {
      if (row.filter.kind == kind && row.l2_lambda == lambda && row.status.ok()) {
        return &row;
      }
    }
    return nullptr;
  };
  const SweepRow* base = find(FilterKind::kNone, 0.0);
  const SweepRow* label = find(FilterKind::kLabelOnly, 0.0);
  const SweepRow* moderate = find(FilterKind::kNone, 0.001);
  const SweepRow* largest = find(FilterKind::kNone, 0.05);
  if (!base || !label || !moderate || !largest) {
    return Report(6, false, "sweep cells missing or failed");
  }
  const double p_none = Or(base->attack_precision, 0);
  const double p_label = Or(label->attack_precision, 0);
  const bool a = label->attack_precision && base->attack_precision &&
                 p_label <= p_none - 0.05 && p_label >= 0.55;
  const bool b = std::abs(Or(largest->attack_accuracy, 0) - 0.5) <= 0.08;
  const bool cc = moderate->target_test_accuracy > base->target_test_accuracy;
  Report(6, a && b && cc,
         absl::StrFormat("(a) label-only precision %.4f vs none %.4f (drop >= "
                         "0.05, >= 0.55) %s; (b) lambda 0.05 attack accuracy %s "
                         "(within 0.08 of 0.5) %s; (c) test accuracy %.4f at "
                         "lambda 0.001 vs %.4f at 0 %s",
                         p_label, p_none, a ? "ok" : "no",
                         R(largest->attack_accuracy), b ? "ok" : "no",
                         moderate->target_test_accuracy,
                         base->target_test_accuracy, cc ? "ok" : "no"));
}

void FormulaSuite() {
  std::vector<std::string> broken;
  for (int n : {2, 3, 10, 50, 100}) {
    const std::vector<double> uniform(n, 1.0 / n);
    std::vector<double> one_hot(n, 0.0);
    one_hot[n / 2] = 1.0;
    absl::StatusOr<double> hu = NormalizedEntropy(uniform);
    absl::StatusOr<double> ho = NormalizedEntropy(one_hot);
    if (!hu.ok() || std::abs(*hu - 1.0) > 1e-12) broken.push_back("uniform entropy");
    if (!ho.ok() || std::abs(*ho) > 1e-12) broken.push_back("one-hot entropy");
  }

  Rng rng(2026);
  const std::vector<double> temperatures = {0.1, 0.25, 0.5, 1, 2, 4, 8, 16};
  bool monotone = true;
  for (int v = 0; v < 100; ++v) {
    const std::size_t n = 2 + rng.UniformIndex(20);
    std::vector<double> logits(n);
    for (double& z : logits) z = 10.0 * (rng.Uniform() - 0.5);
    double previous = -1.0;
    for (double t : temperatures) {
      absl::StatusOr<PredictionVector> p = SoftmaxWithTemperature(logits, t);
      if (!p.ok()) {
        monotone = false;
        break;
      }
      const double h = *NormalizedEntropy(*p);
      if (h < previous - 1e-12) monotone = false;
      previous = h;
    }
  }
  if (!monotone) broken.push_back("temperature entropy monotonicity");

  bool idempotent = true, argmax_kept = true;
  for (int v = 0; v < 200; ++v) {
    const std::size_t n = 2 + rng.UniformIndex(30);
    std::vector<double> logits(n);
    for (double& z : logits) z = 6.0 * (rng.Uniform() - 0.5);
    const PredictionVector p = *SoftmaxWithTemperature(logits, 1.0);
    for (int d = 0; d <= 4; ++d) {
      absl::StatusOr<FilteredPrediction> once = ApplyFilter(MitigationFilter::Round(d), p);
      if (!once.ok()) {
        idempotent = false;
        continue;
      }
      absl::StatusOr<FilteredPrediction> twice =
          ApplyFilter(MitigationFilter::Round(d), once->probabilities);
      if (!twice.ok() || twice->probabilities != once->probabilities) {
        idempotent = false;
      }
    }
    for (int k = 1; k <= static_cast<int>(n); ++k) {
      absl::StatusOr<FilteredPrediction> top = ApplyFilter(MitigationFilter::TopK(k), p);
      if (!top.ok() || ArgMax(top->probabilities) != ArgMax(p)) argmax_kept = false;
    }
  }
  if (!idempotent) broken.push_back("round idempotence");
  if (!argmax_kept) broken.push_back("top-k argmax");

  std::vector<EvaluatedVerdict> verdicts;
  for (int i = 0; i < 1000; ++i) {
    verdicts.push_back({static_cast<std::size_t>(i), i % 7,
                        VerdictFromProbability(0.9),
                        i < 500 ? Membership::kIn : Membership::kOut});
  }
  absl::StatusOr<AttackEvaluation> e = EvaluateAttack(verdicts, 7);
  if (!e.ok() || e->overall.accuracy() != std::optional<double>(0.5)) {
    broken.push_back("always-in accuracy");
  }

  std::string detail = "entropy extremes, temperature monotonicity over 100 "
                       "vectors, round idempotence, top-k argmax, always-in "
                       "accuracy 0.5";
  if (!broken.empty()) {
    detail += "; broken:";
    for (const std::string& b : broken) detail += " " + b;
  }
  Report(7, broken.empty(), detail);
}

void GradientCheck() {
  ModelArchitecture mlp{ModelKind::kMlp, 12, 7, Activation::kTanh, 5};
  ModelArchitecture relu{ModelKind::kMlp, 12, 7, Activation::kRelu, 5};
  ModelArchitecture logistic{ModelKind::kLogisticRegression, 12, 0,
                             Activation::kTanh, 5};
  std::string detail;
  bool pass = true;
  int seed = 100;
  for (const auto& [name, arch] :
       {std::pair<const char*, ModelArchitecture>{"mlp tanh", mlp},
        {"mlp relu", relu},
        {"logistic", logistic}}) {
    absl::StatusOr<testing::GradientCheckResult> r =
        testing::CheckGradients(arch, 25, 0.01, seed++);
    if (!r.ok()) {
      pass = false;
      detail += absl::StrFormat("%s error; ", name);
      continue;
    }
    pass = pass && r->points >= 20 && r->max_relative_error < 1e-4;
    detail += absl::StrFormat("%s %d points max relative error %.2e; ", name,
                              r->points, r->max_relative_error);
  }
  Report(8, pass, detail + "(< 1e-4)");
}

void BlackBoxEquivalence(const std::optional<AuditResult>& local) {
  if (!local) return Report(9, false, "in-process audit did not complete");
  const fs::path local_dir = g_work / "c1_overfit";
  absl::StatusOr<TrainedModel> model =
      LoadModel((local_dir / "models" / "target.bin").string());
  if (!model.ok()) return Report(9, false, "cannot load target.bin");
  absl::StatusOr<std::unique_ptr<PredictionServer>> server =
      PredictionServer::Start(*model, MitigationFilter::None(), "127.0.0.1", 0);
  if (!server.ok()) return Report(9, false, "cannot start server");
  std::optional<AuditResult> remote =
      Audit(std::string(kOverfitBase) + "remote = " + (*server)->url() + "\n",
            "c9_remote");
  const std::uint64_t served = (*server)->predictions_served();
  (*server)->Stop();
  if (!remote) return Report(9, false, "remote audit did not complete");

  const auto a = SummaryRow(local_dir);
  const auto b = SummaryRow(g_work / "c9_remote");
  double worst = 0.0;
  bool rates_ok = !a.empty() && a.size() == b.size();
  for (const auto& [key, value] : a) {
    auto it = b.find(key);
    if (it == b.end()) {
      rates_ok = false;
      continue;
    }
    if (value == "NA" || it->second == "NA") {
      rates_ok = rates_ok && value == it->second;
      continue;
    }
    worst = std::max(worst, std::abs(std::stod(value) - std::stod(it->second)));
  }
  rates_ok = rates_ok && worst <= 0.02;
  const RunManifest& lm = local->manifest;
  const RunManifest& rm = remote->manifest;
  const bool ledger_ok = lm.ledger_total() == rm.ledger_total() &&
                         lm.ledger_synthesis == rm.ledger_synthesis &&
                         lm.ledger_attack_set == rm.ledger_attack_set &&
                         lm.ledger_evaluation == rm.ledger_evaluation &&
                         served == rm.target_queries();
  Report(9, rates_ok && ledger_ok,
         absl::StrFormat("largest rate difference %.6f (<= 0.02); ledger total "
                         "%d in-process vs %d over HTTP, server answered %d",
                         worst, lm.ledger_total(), rm.ledger_total(), served));
}

void Determinism() {
  std::optional<AuditResult> again = Audit(kOverfitBase, "c10_rerun");
  if (!again) return Report(10, false, "rerun did not complete");
  std::size_t files = 0;
  std::vector<std::string> differing;
  for (const auto& entry :
       fs::directory_iterator(g_work / "c1_overfit" / "metrics")) {
    ++files;
    const fs::path other = g_work / "c10_rerun" / "metrics" / entry.path().filename();
    if (Slurp(entry.path()) != Slurp(other)) {
      differing.push_back(entry.path().filename().string());
    }
  }
  std::string detail = absl::StrFormat("%zu metric files compared", files);
  for (const std::string& d : differing) detail += ", differs: " + d;
  Report(10, files > 0 && differing.empty(), detail);
}

int Main(int argc, char** argv) {
  g_work = argc > 1 ? fs::path(argv[1]) : fs::current_path() / "acceptance_runs";
  std::error_code ec;
  fs::remove_all(g_work, ec);
  fs::create_directories(g_work);

  const auto start = std::chrono::steady_clock::now();
  std::optional<AuditResult> overfit = Audit(kOverfitBase, "c1_overfit");
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  OverfitLeakage(overfit, seconds);
  NonOverfitNull();
  ClassCount();
  NoisyShadows(overfit);
  ModelSynthesis(overfit);
  MitigationSweep();
  FormulaSuite();
  GradientCheck();
  BlackBoxEquivalence(overfit);
  Determinism();

  std::printf("%d of 10 criteria failed\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}

}  // namespace
}  // namespace mia

int main(int argc, char** argv) { return mia::Main(argc, argv); }
