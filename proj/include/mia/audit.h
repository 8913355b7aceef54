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

#ifndef MIA_AUDIT_H_
#define MIA_AUDIT_H_

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "mia/attack.h"
#include "mia/blackbox.h"
#include "mia/datasets.h"
#include "mia/metrics.h"
#include "mia/mitigation.h"
#include "mia/models.h"
#include "mia/synthesis.h"

namespace mia {

inline constexpr char kToolkitVersion[] = "0.1.0";

enum class CorpusSource { kSynthetic, kCsv };
enum class ShadowDataMethod { kRealPool, kMarginal, kModelSynthesis, kNoisy };
enum class AttackTrainer { kLocal, kService };

// One reproducible experiment. Parsed from a flat `key = value` file; see
// ParseRunConfig for the key list.
struct RunConfig {
  std::uint64_t seed = 0;

  CorpusSource corpus_source = CorpusSource::kSynthetic;
  std::string csv_path;
  CorpusSchema schema;
  std::size_t per_class = 120;
  double flip_prob = 0.4;
  int recluster_classes = 0;  // 0 keeps the corpus labels

  std::size_t train_size = 1000;

  ModelArchitecture target_architecture;
  TrainingConfig target_training;

  std::size_t shadow_count = 10;
  ShadowDataMethod shadow_method = ShadowDataMethod::kRealPool;
  double shadow_noise = 0.1;
  std::size_t shadow_train_size = 0;  // 0: same as train_size
  std::size_t synthetic_records = 0;  // 0: method-specific default
  SynthesisConfig synthesis;
  int synthesis_max_failures = 5;

  ModelArchitecture attack_architecture;
  TrainingConfig attack_training;
  AttackTrainer attack_trainer = AttackTrainer::kLocal;

  MitigationFilter mitigation;
  std::vector<MitigationFilter> sweep_filters;
  std::vector<double> sweep_lambdas;

  std::string out_dir = "run";
  int workers = 1;
  std::string remote_url;

  // Normalized key/value pairs the config was built from.
  std::map<std::string, std::string> entries;

  std::size_t effective_shadow_train_size() const {
    return shadow_train_size == 0 ? train_size : shadow_train_size;
  }
};

// Parses `key = value` lines ('#' starts a comment). Unknown keys, malformed
// values and a missing seed are errors naming the line.
absl::StatusOr<RunConfig> ParseRunConfig(std::string_view text);
absl::StatusOr<RunConfig> LoadRunConfig(const std::string& path);
// Re-parses with `key` set to `value`.
absl::StatusOr<RunConfig> OverrideConfig(const RunConfig& config,
                                         const std::string& key,
                                         const std::string& value);

// FNV-1a over the sorted entries, excluding run-location keys (out,
// workers, remote).
std::uint64_t ConfigHash(const RunConfig& config);

enum class Stage {
  kConfig = 0,
  kData,
  kTarget,
  kShadowData,
  kShadows,
  kAttack,
  kEvaluation,
  kReport,
};
inline constexpr int kStageCount = 8;
const char* StageName(Stage stage);
// Process exit code for a failure in `stage` (2..9).
int StageExitCode(Stage stage);

struct StageRecord {
  Stage stage = Stage::kConfig;
  std::string status = "skipped";  // complete | failed | skipped
  double seconds = 0.0;
  std::string error;
};

struct RunManifest {
  std::uint64_t config_hash = 0;
  std::string toolkit_version = kToolkitVersion;
  std::vector<StageRecord> stages;
  std::vector<std::string> artifacts;  // relative to the run directory
  std::uint64_t ledger_synthesis = 0;
  std::uint64_t ledger_attack_set = 0;
  std::uint64_t ledger_evaluation = 0;
  bool disjointness_verified = false;
  std::size_t disjointness_overlaps = 0;
  std::size_t truncation_ties = 0;
  std::vector<int> degenerate_attack_classes;
  std::optional<SynthesisBatch> synthesis;  // model_synthesis runs only

  std::uint64_t ledger_total() const {
    return ledger_synthesis + ledger_attack_set + ledger_evaluation;
  }
  // Queries that reached the target (synthesis + evaluation).
  std::uint64_t target_queries() const {
    return ledger_synthesis + ledger_evaluation;
  }
};

struct AuditOptions {
  Stage stop_after = Stage::kReport;
  // Replaces the target with this service (e.g. an instrumented proxy).
  const PredictionService* target_override = nullptr;
  // When set, evaluation reuses these attack models and the shadow stages
  // are skipped.
  const AttackModelSet* attack_models_override = nullptr;
  // A previously trained target to deploy instead of training one.
  std::optional<TrainedModel> preloaded_target;
  std::function<void(std::string_view)> log;
};

struct AuditResult {
  absl::Status status;
  std::optional<Stage> failed_stage;
  RunManifest manifest;

  std::vector<DataRecord> corpus;
  SplitPlan split;
  std::optional<TrainedModel> target_model;  // absent in remote mode
  double target_train_accuracy = 0.0;
  double target_test_accuracy = 0.0;
  std::vector<DataRecord> shadow_data;
  std::vector<TrainedModel> shadow_models;
  std::optional<AttackModelSet> attack_models;
  std::vector<EvaluatedVerdict> verdicts;
  std::optional<AttackEvaluation> evaluation;
  std::optional<LeakageProfile> leakage;
};

// Split -> target (local training or remote attach) -> shadow data ->
// shadows -> attack sets -> attack models -> balanced evaluation -> reports.
// Artifacts land under config.out_dir; a failed stage is recorded in the
// manifest and earlier artifacts are kept.
AuditResult RunAudit(const RunConfig& config, const AuditOptions& options = {});

struct SweepRow {
  MitigationFilter filter;
  double l2_lambda = 0.0;
  absl::Status status;
  double target_test_accuracy = 0.0;
  std::optional<double> attack_accuracy;
  std::optional<double> attack_precision;
  std::optional<double> attack_recall;
  std::optional<double> median_class_precision;
};

struct SweepReport {
  absl::Status status;
  std::vector<SweepRow> rows;
};

// One audit per (filter, lambda) cell over a shared corpus and split.
// Filters reuse the target and shadows trained for their lambda; failures
// stay inside their cell.
SweepReport RunMitigationSweep(const RunConfig& config,
                               std::function<void(std::string_view)> log = {});

absl::StatusOr<AttackModelSet> LoadAttackModels(const std::string& directory,
                                                int class_count);

}  // namespace mia

#endif  // MIA_AUDIT_H_
