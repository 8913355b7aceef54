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

#include "mia/audit.h"

#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "absl/strings/str_cat.h"
#include "absl/strings/str_format.h"
#include "json.hpp"
#include "mia/numerics.h"
#include "mia/shadows.h"

namespace mia {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

// Independent seed streams derived from the run seed.
enum SeedStream : std::uint64_t {
  kCorpusStream = 1,
  kClusterStream,
  kSplitStream,
  kTargetStream,
  kShadowDataStream,
  kShadowPlanStream,
  kAttackStream,
  kEvaluationStream,
};

// ---------------------------------------------------------------------------
// Config parsing.

struct RawEntry {
  std::string value;
  int line = 0;
};
using RawEntries = std::map<std::string, RawEntry>;

std::string TrimCopy(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::vector<std::string> SplitList(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = TrimCopy(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

class ConfigReader {
 public:
  explicit ConfigReader(const RawEntries& entries) : entries_(entries) {}

  const absl::Status& status() const { return status_; }
  bool Has(const std::string& key) const { return entries_.count(key) > 0; }

  template <typename T>
  void Number(const std::string& key, T& out) {
    const RawEntry* e = Find(key);
    if (e == nullptr) return;
    const char* begin = e->value.data();
    const char* end = begin + e->value.size();
    T parsed{};
    auto [ptr, ec] = std::from_chars(begin, end, parsed);
    if (e->value.empty() || ec != std::errc() || ptr != end) {
      Fail(*e, key, "is not a valid number");
      return;
    }
    out = parsed;
  }

  void Size(const std::string& key, std::size_t& out) {
    std::uint64_t v = out;
    Number(key, v);
    out = static_cast<std::size_t>(v);
  }

  void String(const std::string& key, std::string& out) {
    if (const RawEntry* e = Find(key)) out = e->value;
  }

  template <typename Enum>
  void Choice(const std::string& key,
              const std::vector<std::pair<std::string, Enum>>& options,
              Enum& out) {
    const RawEntry* e = Find(key);
    if (e == nullptr) return;
    for (const auto& [name, value] : options) {
      if (e->value == name) {
        out = value;
        return;
      }
    }
    std::string allowed;
    for (const auto& option : options) {
      absl::StrAppend(&allowed, allowed.empty() ? "" : "|", option.first);
    }
    Fail(*e, key, absl::StrCat("must be one of ", allowed));
  }

  void Filter(const std::string& key, MitigationFilter& out) {
    const RawEntry* e = Find(key);
    if (e == nullptr) return;
    absl::StatusOr<MitigationFilter> f = ParseFilter(e->value);
    if (!f.ok()) {
      Fail(*e, key, std::string(f.status().message()));
      return;
    }
    out = *f;
  }

  void FilterList(const std::string& key, std::vector<MitigationFilter>& out) {
    const RawEntry* e = Find(key);
    if (e == nullptr) return;
    out.clear();
    for (const std::string& item : SplitList(e->value)) {
      absl::StatusOr<MitigationFilter> f = ParseFilter(item);
      if (!f.ok()) {
        Fail(*e, key, std::string(f.status().message()));
        return;
      }
      out.push_back(*f);
    }
  }

  void DoubleList(const std::string& key, std::vector<double>& out) {
    const RawEntry* e = Find(key);
    if (e == nullptr) return;
    out.clear();
    for (const std::string& item : SplitList(e->value)) {
      double v;
      auto [ptr, ec] =
          std::from_chars(item.data(), item.data() + item.size(), v);
      if (ec != std::errc() || ptr != item.data() + item.size()) {
        Fail(*e, key, absl::StrCat("holds a non-numeric entry '", item, "'"));
        return;
      }
      out.push_back(v);
    }
  }

  void Fail(const std::string& key, const std::string& why) {
    if (!status_.ok()) return;
    const RawEntry* e = Find(key);
    status_ = absl::InvalidArgumentError(
        e ? absl::StrCat("config line ", e->line, ": ", key, " ", why)
          : absl::StrCat("config: ", key, " ", why));
  }

 private:
  const RawEntry* Find(const std::string& key) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? nullptr : &it->second;
  }
  void Fail(const RawEntry& e, const std::string& key, const std::string& why) {
    if (!status_.ok()) return;
    status_ = absl::InvalidArgumentError(
        absl::StrCat("config line ", e.line, ": ", key, " ", why));
  }

  const RawEntries& entries_;
  absl::Status status_;
};

const std::set<std::string>& KnownKeys() {
  static const std::set<std::string> keys = {
      "seed",
      "corpus.source", "corpus.path", "corpus.dimension", "corpus.features",
      "corpus.classes", "corpus.per_class", "corpus.flip_prob",
      "corpus.recluster",
      "split.train_size",
      "target.model", "target.hidden", "target.activation",
      "target.learning_rate", "target.lr_decay", "target.epochs",
      "target.batch_size", "target.l2", "target.temperature",
      "shadow.count", "shadow.method", "shadow.noise", "shadow.train_size",
      "shadow.records",
      "synthesis.k_max", "synthesis.k_min", "synthesis.rej_max",
      "synthesis.conf_min", "synthesis.iter_max", "synthesis.max_failures",
      "attack.model", "attack.hidden", "attack.activation",
      "attack.learning_rate", "attack.lr_decay", "attack.epochs",
      "attack.batch_size", "attack.l2", "attack.trainer",
      "mitigation", "sweep.filters", "sweep.lambdas",
      "out", "workers", "remote",
  };
  return keys;
}

const std::vector<std::pair<std::string, ModelKind>> kModelKinds = {
    {"mlp", ModelKind::kMlp}, {"logistic", ModelKind::kLogisticRegression}};
const std::vector<std::pair<std::string, Activation>> kActivations = {
    {"tanh", Activation::kTanh}, {"relu", Activation::kRelu}};

absl::StatusOr<RunConfig> BuildConfig(const RawEntries& raw) {
  for (const auto& [key, entry] : raw) {
    if (KnownKeys().count(key) == 0) {
      return absl::InvalidArgumentError(
          absl::StrCat("config line ", entry.line, ": unknown key '", key, "'"));
    }
  }
  if (raw.count("seed") == 0) {
    return absl::InvalidArgumentError("config: seed is mandatory");
  }

  RunConfig c;
  c.target_architecture.kind = ModelKind::kMlp;
  c.target_architecture.hidden_size = 128;
  c.target_architecture.hidden_activation = Activation::kTanh;
  c.target_training.max_epochs = 200;
  c.attack_architecture.kind = ModelKind::kMlp;
  c.attack_architecture.hidden_size = 64;
  c.attack_architecture.hidden_activation = Activation::kRelu;
  c.attack_training.max_epochs = 100;

  ConfigReader r(raw);
  r.Number("seed", c.seed);

  r.Choice<CorpusSource>("corpus.source",
                         {{"synthetic", CorpusSource::kSynthetic},
                          {"csv", CorpusSource::kCsv}},
                         c.corpus_source);
  r.String("corpus.path", c.csv_path);
  std::size_t dimension = 600;
  int classes = 50;
  std::string feature_kind = "binary";
  r.Size("corpus.dimension", dimension);
  r.Number("corpus.classes", classes);
  r.String("corpus.features", feature_kind);
  r.Size("corpus.per_class", c.per_class);
  r.Number("corpus.flip_prob", c.flip_prob);
  r.Number("corpus.recluster", c.recluster_classes);
  r.Size("split.train_size", c.train_size);

  r.Choice("target.model", kModelKinds, c.target_architecture.kind);
  r.Size("target.hidden", c.target_architecture.hidden_size);
  r.Choice("target.activation", kActivations,
           c.target_architecture.hidden_activation);
  r.Number("target.learning_rate", c.target_training.learning_rate);
  r.Number("target.lr_decay", c.target_training.lr_decay);
  r.Number("target.epochs", c.target_training.max_epochs);
  r.Number("target.batch_size", c.target_training.batch_size);
  r.Number("target.l2", c.target_training.l2_lambda);
  r.Number("target.temperature", c.target_training.softmax_temperature);

  r.Size("shadow.count", c.shadow_count);
  r.Choice<ShadowDataMethod>(
      "shadow.method",
      {{"real_pool", ShadowDataMethod::kRealPool},
       {"marginal", ShadowDataMethod::kMarginal},
       {"model_synthesis", ShadowDataMethod::kModelSynthesis},
       {"noisy", ShadowDataMethod::kNoisy}},
      c.shadow_method);
  r.Number("shadow.noise", c.shadow_noise);
  r.Size("shadow.train_size", c.shadow_train_size);
  r.Size("shadow.records", c.synthetic_records);

  r.Number("synthesis.k_max", c.synthesis.k_max);
  r.Number("synthesis.k_min", c.synthesis.k_min);
  r.Number("synthesis.rej_max", c.synthesis.rej_max);
  r.Number("synthesis.conf_min", c.synthesis.conf_min);
  r.Number("synthesis.iter_max", c.synthesis.iter_max);
  r.Number("synthesis.max_failures", c.synthesis_max_failures);

  r.Choice("attack.model", kModelKinds, c.attack_architecture.kind);
  r.Size("attack.hidden", c.attack_architecture.hidden_size);
  r.Choice("attack.activation", kActivations,
           c.attack_architecture.hidden_activation);
  r.Number("attack.learning_rate", c.attack_training.learning_rate);
  r.Number("attack.lr_decay", c.attack_training.lr_decay);
  r.Number("attack.epochs", c.attack_training.max_epochs);
  r.Number("attack.batch_size", c.attack_training.batch_size);
  r.Number("attack.l2", c.attack_training.l2_lambda);
  r.Choice<AttackTrainer>("attack.trainer",
                          {{"local", AttackTrainer::kLocal},
                           {"service", AttackTrainer::kService}},
                          c.attack_trainer);

  r.Filter("mitigation", c.mitigation);
  r.FilterList("sweep.filters", c.sweep_filters);
  r.DoubleList("sweep.lambdas", c.sweep_lambdas);

  r.String("out", c.out_dir);
  r.Number("workers", c.workers);
  r.String("remote", c.remote_url);
  if (!r.status().ok()) return r.status();

  // Cross-field checks.
  if (c.corpus_source == CorpusSource::kCsv && c.csv_path.empty()) {
    r.Fail("corpus.path", "is required when corpus.source = csv");
  }
  if (c.corpus_source == CorpusSource::kSynthetic && !c.csv_path.empty()) {
    r.Fail("corpus.path",
           "conflicts with corpus.source = synthetic (one corpus source)");
  }
  if (feature_kind == "binary") {
    c.schema = CorpusSchema::Binary(dimension, classes);
  } else if (feature_kind.rfind("categorical:", 0) == 0) {
    int values = 0;
    const std::string arg = feature_kind.substr(12);
    auto [ptr, ec] = std::from_chars(arg.data(), arg.data() + arg.size(), values);
    if (ec != std::errc() || ptr != arg.data() + arg.size() || values < 2) {
      r.Fail("corpus.features", "needs categorical:N with N >= 2");
    }
    c.schema.features.assign(dimension, FeatureSpec::Categorical(values));
    c.schema.class_count = classes;
  } else {
    r.Fail("corpus.features", "must be binary or categorical:N");
  }
  if (absl::Status s = c.schema.Validate(); !s.ok()) {
    r.Fail("corpus", std::string(s.message()));
  }
  if (!(c.flip_prob >= 0.0 && c.flip_prob <= 1.0)) {
    r.Fail("corpus.flip_prob", "must lie in [0, 1]");
  }
  if (c.recluster_classes == 1 || c.recluster_classes < 0) {
    r.Fail("corpus.recluster", "must be 0 (off) or at least 2");
  }
  if (c.train_size < 1) r.Fail("split.train_size", "must be at least 1");
  if (c.shadow_count < 1) r.Fail("shadow.count", "must be at least 1");
  if (!(c.shadow_noise >= 0.0 && c.shadow_noise <= 1.0)) {
    r.Fail("shadow.noise", "must lie in [0, 1]");
  }
  if (c.workers < 1) r.Fail("workers", "must be at least 1");
  if (c.synthesis_max_failures < 1) {
    r.Fail("synthesis.max_failures", "must be at least 1");
  }
  if (absl::Status s = c.target_training.Validate(); !s.ok()) {
    r.Fail("target", std::string(s.message()));
  }
  if (absl::Status s = c.attack_training.Validate(); !s.ok()) {
    r.Fail("attack", std::string(s.message()));
  }
  if (absl::Status s = c.synthesis.Validate(); !s.ok()) {
    r.Fail("synthesis", std::string(s.message()));
  }
  if (c.target_architecture.kind == ModelKind::kMlp &&
      c.target_architecture.hidden_size < 1) {
    r.Fail("target.hidden", "must be at least 1");
  }
  if (c.attack_architecture.kind == ModelKind::kMlp &&
      c.attack_architecture.hidden_size < 1) {
    r.Fail("attack.hidden", "must be at least 1");
  }
  if (!r.status().ok()) return r.status();

  for (const auto& [key, entry] : raw) c.entries[key] = entry.value;
  return c;
}

absl::StatusOr<RawEntries> ParseRaw(std::string_view text) {
  RawEntries entries;
  std::stringstream in{std::string(text)};
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string trimmed = TrimCopy(line);
    if (trimmed.empty()) continue;
    const std::size_t eq = trimmed.find('=');
    if (eq == std::string::npos) {
      return absl::InvalidArgumentError(
          absl::StrCat("config line ", number, ": expected key = value"));
    }
    const std::string key = TrimCopy(trimmed.substr(0, eq));
    const std::string value = TrimCopy(trimmed.substr(eq + 1));
    if (key.empty()) {
      return absl::InvalidArgumentError(
          absl::StrCat("config line ", number, ": empty key"));
    }
    if (entries.count(key)) {
      return absl::InvalidArgumentError(absl::StrCat(
          "config line ", number, ": duplicate key '", key, "'"));
    }
    entries[key] = {value, number};
  }
  return entries;
}

RawEntries EntriesOf(const RunConfig& config) {
  RawEntries raw;
  int line = 0;
  for (const auto& [key, value] : config.entries) raw[key] = {value, ++line};
  return raw;
}

// ---------------------------------------------------------------------------
// Pipeline.

double SecondsSince(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                       start)
      .count();
}

json RateJson(std::optional<double> v) {
  return v ? json(*v) : json(nullptr);
}

class AuditRun {
 public:
  AuditRun(RunConfig config, const AuditOptions& options)
      : config_(std::move(config)), options_(options),
        root_(config_.out_dir) {
    result_.manifest.config_hash = ConfigHash(config_);
    for (int s = 0; s < kStageCount; ++s) {
      StageRecord record;
      record.stage = static_cast<Stage>(s);
      result_.manifest.stages.push_back(record);
    }
  }

  AuditResult& result() { return result_; }
  const RunConfig& config() const { return config_; }

  // Adopts corpus, split, and (when present) target and shadows from an
  // earlier run so only the remaining stages execute.
  void Adopt(const AuditResult& prior, bool with_models) {
    result_.corpus = prior.corpus;
    result_.split = prior.split;
    schema_ = prior_schema_ = EffectiveSchema(prior);
    adopted_data_ = true;
    if (with_models) {
      result_.target_model = prior.target_model;
      result_.shadow_data = prior.shadow_data;
      result_.shadow_models = prior.shadow_models;
      result_.manifest.synthesis = prior.manifest.synthesis;
      result_.manifest.ledger_synthesis = prior.manifest.ledger_synthesis;
      adopted_models_ = true;
    }
  }

  // Runs stages in order, stopping after `last` or at the first failure.
  void Execute(Stage last) {
    const auto start = std::chrono::steady_clock::now();
    Stage stages[] = {Stage::kConfig,     Stage::kData,    Stage::kTarget,
                      Stage::kShadowData, Stage::kShadows, Stage::kAttack,
                      Stage::kEvaluation, Stage::kReport};
    for (Stage stage : stages) {
      if (static_cast<int>(stage) > static_cast<int>(last)) break;
      if (!RunStage(stage)) break;
    }
    total_seconds_ = SecondsSince(start);
    CopyLedger();
    if (absl::Status s = WriteManifest(); !s.ok() && result_.status.ok()) {
      result_.status = s;
      result_.failed_stage = Stage::kReport;
    }
  }

  const CorpusSchema& schema() const { return schema_; }

 private:
  static CorpusSchema EffectiveSchemaFor(const RunConfig& config) {
    CorpusSchema schema = config.schema;
    if (config.recluster_classes > 0) {
      schema.class_count = config.recluster_classes;
    }
    return schema;
  }
  CorpusSchema EffectiveSchema(const AuditResult&) const {
    return EffectiveSchemaFor(config_);
  }

  void Log(std::string_view message) {
    if (options_.log) options_.log(message);
  }

  bool RunStage(Stage stage) {
    StageRecord& record = result_.manifest.stages[static_cast<int>(stage)];
    const auto start = std::chrono::steady_clock::now();
    Log(absl::StrCat("stage ", StageName(stage), " ..."));
    absl::Status status;
    bool skipped = false;
    switch (stage) {
      case Stage::kConfig:
        status = MakeDirectories();
        break;
      case Stage::kData:
        status = DataStage();
        break;
      case Stage::kTarget:
        status = TargetStage();
        break;
      case Stage::kShadowData:
        skipped = options_.attack_models_override != nullptr;
        if (!skipped) status = ShadowDataStage();
        break;
      case Stage::kShadows:
        skipped = options_.attack_models_override != nullptr;
        if (!skipped) status = ShadowsStage();
        break;
      case Stage::kAttack:
        status = AttackStage();
        break;
      case Stage::kEvaluation:
        status = EvaluationStage();
        break;
      case Stage::kReport:
        status = ReportStage();
        break;
    }
    record.seconds = SecondsSince(start);
    if (skipped) {
      record.status = "skipped";
      return true;
    }
    if (!status.ok()) {
      record.status = "failed";
      record.error = status.ToString();
      result_.status = status;
      result_.failed_stage = stage;
      Log(absl::StrCat("stage ", StageName(stage), " failed: ",
                       status.ToString()));
      return false;
    }
    record.status = "complete";
    Log(absl::StrFormat("stage %s done in %.2fs", StageName(stage),
                        record.seconds));
    return true;
  }

  std::string Artifact(const fs::path& relative) {
    result_.manifest.artifacts.push_back(relative.generic_string());
    return (root_ / relative).string();
  }

  absl::Status MakeDirectories() {
    std::error_code ec;
    for (const char* sub : {"data", "models", "metrics"}) {
      fs::create_directories(root_ / sub, ec);
      if (ec) {
        return absl::UnavailableError(absl::StrCat(
            "cannot create ", (root_ / sub).string(), ": ", ec.message()));
      }
    }
    return absl::OkStatus();
  }

  absl::Status DataStage() {
    if (!adopted_data_) {
      schema_ = EffectiveSchemaFor(config_);
      absl::StatusOr<std::vector<DataRecord>> corpus;
      if (config_.corpus_source == CorpusSource::kSynthetic) {
        corpus = GenerateSyntheticCorpus(config_.schema, config_.per_class,
                                         config_.flip_prob,
                                         DeriveSeed(config_.seed, kCorpusStream));
      } else {
        corpus = LoadCsv(config_.csv_path, config_.schema);
      }
      if (!corpus.ok()) return corpus.status();
      if (config_.recluster_classes > 0) {
        std::vector<std::vector<double>> features;
        features.reserve(corpus->size());
        for (const DataRecord& r : *corpus) features.push_back(r.features);
        corpus = ClusterToClasses(features, config_.schema,
                                  config_.recluster_classes,
                                  DeriveSeed(config_.seed, kClusterStream));
        if (!corpus.ok()) return corpus.status();
      }
      result_.corpus = *std::move(corpus);
      absl::StatusOr<SplitPlan> split =
          MakeSplit(result_.corpus.size(), config_.train_size,
                    DeriveSeed(config_.seed, kSplitStream));
      if (!split.ok()) return split.status();
      result_.split = *std::move(split);
    }
    if (absl::Status s = WriteCsv(Artifact("data/corpus.csv"), result_.corpus);
        !s.ok()) {
      return s;
    }
    std::ofstream split_out(Artifact("data/split.csv"));
    split_out << "index,role\n";
    for (std::size_t i : result_.split.target_train) split_out << i << ",target_train\n";
    for (std::size_t i : result_.split.target_test) split_out << i << ",target_test\n";
    for (std::size_t i : result_.split.shadow_pool) split_out << i << ",shadow_pool\n";
    if (!split_out) return absl::DataLossError("cannot write data/split.csv");
    return absl::OkStatus();
  }

  ModelArchitecture TargetArchitecture() const {
    ModelArchitecture arch = config_.target_architecture;
    arch.input_dim = schema_.dimension();
    arch.class_count = schema_.class_count;
    return arch;
  }

  absl::Status TargetStage() {
    observed_accuracies_ = true;
    if (!config_.remote_url.empty()) {
      absl::StatusOr<std::unique_ptr<RemoteService>> remote =
          RemoteService::Connect(config_.remote_url);
      if (!remote.ok()) return remote.status();
      const ServiceSchema s = (*remote)->schema();
      if (s.input_dim != schema_.dimension() ||
          s.class_count != schema_.class_count) {
        return absl::FailedPreconditionError(absl::StrCat(
            "remote target schema (", s.input_dim, ", ", s.class_count,
            ") does not match the corpus (", schema_.dimension(), ", ",
            schema_.class_count, ")"));
      }
      owned_target_ = *std::move(remote);
      target_ = owned_target_.get();
      return absl::OkStatus();
    }
    if (options_.target_override != nullptr) {
      target_ = options_.target_override;
      return absl::OkStatus();
    }
    if (options_.preloaded_target && !result_.target_model) {
      result_.target_model = options_.preloaded_target;
    }
    if (!result_.target_model) {
      TrainingConfig training = config_.target_training;
      training.seed = DeriveSeed(config_.seed, kTargetStream);
      const std::vector<DataRecord> train =
          SelectRecords(result_.corpus, result_.split.target_train);
      const std::vector<DataRecord> test =
          SelectRecords(result_.corpus, result_.split.target_test);
      absl::StatusOr<TrainedModel> model =
          Train(TargetArchitecture(), training, train, test);
      if (!model.ok()) return model.status();
      result_.target_model = *std::move(model);
      Log(absl::StrFormat("target train accuracy %.4f, test accuracy %.4f",
                          result_.target_model->train_accuracy,
                          result_.target_model->test_accuracy.value_or(0.0)));
    }
    const TrainedModel& model = *result_.target_model;
    if (absl::Status s = CheckParameterShapes(TargetArchitecture(),
                                              model.parameters);
        !s.ok()) {
      return absl::FailedPreconditionError(
          absl::StrCat("target model does not fit the corpus: ", s.message()));
    }
    observed_accuracies_ = false;
    result_.target_train_accuracy = model.train_accuracy;
    result_.target_test_accuracy = model.test_accuracy.value_or(0.0);
    if (absl::Status s = SaveModel(model, Artifact("models/target.bin"));
        !s.ok()) {
      return s;
    }
    absl::StatusOr<std::unique_ptr<LocalService>> local =
        LocalService::Create(model, config_.mitigation);
    if (!local.ok()) return local.status();
    owned_target_ = *std::move(local);
    target_ = owned_target_.get();
    return absl::OkStatus();
  }

  absl::Status ShadowDataStage() {
    if (!adopted_models_) {
      const std::vector<DataRecord> pool =
          SelectRecords(result_.corpus, result_.split.shadow_pool);
      const std::uint64_t seed = DeriveSeed(config_.seed, kShadowDataStream);
      switch (config_.shadow_method) {
        case ShadowDataMethod::kRealPool:
          result_.shadow_data = pool;
          break;
        case ShadowDataMethod::kNoisy: {
          absl::StatusOr<std::vector<DataRecord>> noisy =
              PerturbNoisyReal(pool, schema_, config_.shadow_noise, seed);
          if (!noisy.ok()) return noisy.status();
          result_.shadow_data = *std::move(noisy);
          break;
        }
        case ShadowDataMethod::kMarginal: {
          absl::Status s = MarginalShadowData(pool, seed);
          if (!s.ok()) return s;
          break;
        }
        case ShadowDataMethod::kModelSynthesis: {
          absl::Status s = SynthesizedShadowData(seed);
          if (!s.ok()) return s;
          break;
        }
      }
    }
    return WriteCsv(Artifact("data/shadow_data.csv"), result_.shadow_data);
  }

  // Per-class marginals of the attacker's population sample, sampled
  // independently per feature and labeled with their class.
  absl::Status MarginalShadowData(const std::vector<DataRecord>& pool,
                                  std::uint64_t seed) {
    if (pool.empty()) {
      return absl::FailedPreconditionError("shadow pool is empty");
    }
    const std::size_t total =
        config_.synthetic_records ? config_.synthetic_records : pool.size();
    std::vector<std::vector<DataRecord>> by_class(schema_.class_count);
    for (const DataRecord& r : pool) by_class[r.label].push_back(r);
    std::size_t emitted = 0;
    for (int c = 0; c < schema_.class_count; ++c) {
      if (by_class[c].empty()) continue;
      // Proportional share; the last non-empty class absorbs rounding.
      std::size_t share = static_cast<std::size_t>(std::llround(
          static_cast<double>(total) * by_class[c].size() / pool.size()));
      share = std::min(share, total - emitted);
      absl::StatusOr<FeatureMarginals> marginals =
          Marginals(by_class[c], schema_);
      if (!marginals.ok()) return marginals.status();
      for (auto& features :
           SampleFromMarginals(*marginals, share, DeriveSeed(seed, c))) {
        result_.shadow_data.push_back({std::move(features), c});
      }
      emitted += share;
    }
    return absl::OkStatus();
  }

  absl::Status SynthesizedShadowData(std::uint64_t seed) {
    const std::size_t count = config_.synthetic_records
                                  ? config_.synthetic_records
                                  : 2 * config_.effective_shadow_train_size();
    SynthesisConfig synthesis = config_.synthesis;
    synthesis.seed = seed;
    const std::vector<double> uniform(schema_.class_count, 1.0);
    absl::StatusOr<SynthesisBatch> batch = SynthesizeBatch(
        *target_, uniform, count, synthesis, schema_, &ledger_,
        config_.synthesis_max_failures, config_.workers);
    if (!batch.ok()) return batch.status();
    Log(absl::StrFormat(
        "synthesized %d records (%d failures, %.1f queries per record)",
        batch->successes, batch->failures, batch->mean_queries_per_success()));
    result_.shadow_data = batch->records;
    result_.manifest.synthesis = *std::move(batch);
    return absl::OkStatus();
  }

  absl::Status ShadowsStage() {
    std::size_t per_shadow = config_.effective_shadow_train_size();
    if (2 * per_shadow > result_.shadow_data.size()) {
      // Synthesis may fall short of its quota; shrink rather than fail.
      per_shadow = result_.shadow_data.size() / 2;
      Log(absl::StrCat("shadow data holds ", result_.shadow_data.size(),
                       " records; shadow train size reduced to ", per_shadow));
    }
    absl::StatusOr<ShadowPlan> plan = MakeShadowPlan(
        result_.shadow_data.size(), config_.shadow_count, per_shadow,
        TargetArchitecture(), config_.target_training,
        DeriveSeed(config_.seed, kShadowPlanStream));
    if (!plan.ok()) return plan.status();
    plan_ = *std::move(plan);
    if (!adopted_models_) {
      absl::StatusOr<std::vector<TrainedModel>> shadows =
          TrainShadows(plan_, result_.shadow_data, config_.workers);
      if (!shadows.ok()) return shadows.status();
      result_.shadow_models = *std::move(shadows);
    }
    for (std::size_t i = 0; i < result_.shadow_models.size(); ++i) {
      absl::Status s = SaveModel(
          result_.shadow_models[i],
          Artifact(absl::StrCat("models/shadow_", i, ".bin")));
      if (!s.ok()) return s;
    }

    // No target training record may appear in any shadow training set.
    std::set<std::vector<double>> target_train;
    for (std::size_t i : result_.split.target_train) {
      target_train.insert(result_.corpus[i].features);
    }
    std::size_t overlaps = 0;
    for (const ShadowAssignment& a : plan_.shadows) {
      for (std::size_t i : a.train) {
        overlaps += target_train.count(result_.shadow_data[i].features);
      }
    }
    result_.manifest.disjointness_overlaps = overlaps;
    result_.manifest.disjointness_verified = overlaps == 0;
    return absl::OkStatus();
  }

  absl::Status AttackStage() {
    if (options_.attack_models_override != nullptr) {
      result_.attack_models = *options_.attack_models_override;
      if (result_.attack_models->class_count() != schema_.class_count) {
        return absl::FailedPreconditionError(
            "attack models do not match the corpus class count");
      }
      return absl::OkStatus();
    }
    absl::StatusOr<AttackSets> sets =
        BuildAttackSets(result_.shadow_models, plan_, result_.shadow_data,
                        config_.mitigation, &ledger_, config_.workers);
    if (!sets.ok()) return sets.status();
    if (absl::Status s = WriteAttackSetsCsv(Artifact("data/attack_sets.csv"), *sets);
        !s.ok()) {
      return s;
    }
    ModelArchitecture arch = config_.attack_architecture;
    TrainingConfig training = config_.attack_training;
    if (config_.attack_trainer == AttackTrainer::kService) {
      // Same trainer recipe as the one that produced the target.
      arch = config_.target_architecture;
      training = config_.target_training;
      training.softmax_temperature = 1.0;
    }
    training.seed = DeriveSeed(config_.seed, kAttackStream);
    std::vector<int> degenerate;
    absl::StatusOr<AttackModelSet> models =
        TrainAttackModels(*sets, arch, training, config_.workers, &degenerate);
    if (!models.ok()) return models.status();
    if (!degenerate.empty()) {
      Log(absl::StrCat(degenerate.size(),
                       " classes have no attack data; they answer 0.5"));
    }
    result_.manifest.degenerate_attack_classes = degenerate;
    result_.attack_models = *std::move(models);
    const std::size_t before = result_.manifest.artifacts.size();
    for (int c = 0; c < result_.attack_models->class_count(); ++c) {
      if (result_.attack_models->models[c]) {
        Artifact(absl::StrCat("models/attack/attack_", c, ".bin"));
      }
    }
    if (result_.manifest.artifacts.size() == before) return absl::OkStatus();
    return SaveAttackModels(*result_.attack_models,
                            (root_ / "models" / "attack").string());
  }

  absl::Status EvaluationStage() {
    struct Item {
      std::size_t index;
      Membership truth;
    };
    std::vector<Item> items;
    for (std::size_t i : result_.split.target_train) {
      items.push_back({i, Membership::kIn});
    }
    Rng rng(DeriveSeed(config_.seed, kEvaluationStream));
    std::vector<std::size_t> nonmembers = result_.split.target_test;
    rng.Shuffle(nonmembers);
    nonmembers.resize(std::min(nonmembers.size(), result_.split.target_train.size()));
    for (std::size_t i : nonmembers) items.push_back({i, Membership::kOut});
    rng.Shuffle(items);

    std::vector<Observation> member_obs, nonmember_obs;
    result_.verdicts.clear();
    for (const Item& item : items) {
      const DataRecord& record = result_.corpus[item.index];
      FilteredPrediction observed;
      absl::StatusOr<MembershipVerdict> verdict = InferMembership(
          *result_.attack_models, *target_, record, &ledger_, &observed);
      if (!verdict.ok()) return verdict.status();
      result_.manifest.truncation_ties += observed.truncation_tie;
      result_.verdicts.push_back(
          {item.index, record.label, *verdict, item.truth});
      (item.truth == Membership::kIn ? member_obs : nonmember_obs)
          .push_back({record.label, std::move(observed.probabilities)});
    }
    if (result_.manifest.truncation_ties > 0) {
      Log(absl::StrCat(result_.manifest.truncation_ties,
                       " responses had truncation ties at the top class"));
    }
    absl::StatusOr<AttackEvaluation> evaluation =
        EvaluateAttack(result_.verdicts, schema_.class_count);
    if (!evaluation.ok()) return evaluation.status();
    result_.evaluation = *std::move(evaluation);
    absl::StatusOr<LeakageProfile> leakage =
        LeakageFromObservations(member_obs, nonmember_obs, schema_.class_count);
    if (!leakage.ok()) return leakage.status();
    result_.leakage = *std::move(leakage);
    if (observed_accuracies_) {
      result_.target_train_accuracy = result_.leakage->train_accuracy;
      result_.target_test_accuracy = result_.leakage->test_accuracy;
    }
    const ConfusionCounts& o = result_.evaluation->overall;
    Log(absl::StrFormat("attack accuracy %s precision %s recall %s",
                        FormatRate(o.accuracy()), FormatRate(o.precision()),
                        FormatRate(o.recall())));
    return absl::OkStatus();
  }

  absl::Status ReportStage() {
    const AttackEvaluation& eval = *result_.evaluation;
    const LeakageProfile& leak = *result_.leakage;
    const ConfusionCounts& o = eval.overall;
    const std::optional<double> median = MedianClassPrecision(eval);

    {
      std::ofstream out(Artifact("metrics/summary.csv"));
      out << "target_train_accuracy,target_test_accuracy,accuracy_gap,"
             "attack_accuracy,attack_precision,attack_recall,"
             "median_class_precision,member_mean_entropy,"
             "nonmember_mean_entropy,member_mean_correct_probability,"
             "nonmember_mean_correct_probability,baseline\n";
      out << FormatRate(result_.target_train_accuracy) << ","
          << FormatRate(result_.target_test_accuracy) << ","
          << FormatRate(result_.target_train_accuracy -
                        result_.target_test_accuracy)
          << "," << FormatRate(o.accuracy()) << ","
          << FormatRate(o.precision()) << "," << FormatRate(o.recall()) << ","
          << FormatRate(median) << "," << FormatRate(leak.member_mean_entropy)
          << "," << FormatRate(leak.nonmember_mean_entropy) << ","
          << FormatRate(leak.member_mean_correct_probability) << ","
          << FormatRate(leak.nonmember_mean_correct_probability) << ","
          << FormatRate(eval.baseline) << "\n";
      if (!out) return absl::DataLossError("cannot write metrics/summary.csv");
    }
    if (absl::Status s =
            WritePerClassCsv(Artifact("metrics/per_class.csv"), eval, leak);
        !s.ok()) {
      return s;
    }
    absl::StatusOr<CdfTable> cdf = PrecisionCdf(PerClassPrecisions(eval));
    if (!cdf.ok()) return cdf.status();
    if (absl::Status s = WriteCdfCsv(Artifact("metrics/precision_cdf.csv"), *cdf);
        !s.ok()) {
      return s;
    }
    {
      std::ofstream out(Artifact("metrics/precision_quantiles.csv"));
      out << "quantile,precision\n";
      for (double q : {0.5, 0.75, 0.9}) {
        out << FormatRate(q) << ","
            << (cdf->sorted_values.empty() ? "NA" : FormatRate(cdf->Quantile(q)))
            << "\n";
      }
      if (!out) return absl::DataLossError("cannot write quantiles");
    }
    if (absl::Status s =
            WriteVerdictsCsv(Artifact("metrics/verdicts.csv"), result_.verdicts);
        !s.ok()) {
      return s;
    }
    json summary = {
        {"config_hash", absl::StrFormat("%016x", result_.manifest.config_hash)},
        {"target", {{"train_accuracy", result_.target_train_accuracy},
                    {"test_accuracy", result_.target_test_accuracy}}},
        {"attack", {{"accuracy", RateJson(o.accuracy())},
                    {"precision", RateJson(o.precision())},
                    {"recall", RateJson(o.recall())},
                    {"median_class_precision", RateJson(median)},
                    {"baseline", eval.baseline},
                    {"undefined_class_precisions", cdf->excluded_undefined}}},
        {"leakage", {{"member_mean_entropy", leak.member_mean_entropy},
                     {"nonmember_mean_entropy", leak.nonmember_mean_entropy},
                     {"member_mean_correct_probability",
                      leak.member_mean_correct_probability},
                     {"nonmember_mean_correct_probability",
                      leak.nonmember_mean_correct_probability}}},
        {"queries", LedgerJson()},
    };
    std::ofstream out(Artifact("metrics/summary.json"));
    out << summary.dump(2) << "\n";
    if (!out) return absl::DataLossError("cannot write metrics/summary.json");
    return absl::OkStatus();
  }

  void CopyLedger() {
    RunManifest& m = result_.manifest;
    m.ledger_synthesis += ledger_.count(QueryPurpose::kSynthesis);
    m.ledger_attack_set = ledger_.count(QueryPurpose::kAttackSet);
    m.ledger_evaluation = ledger_.count(QueryPurpose::kEvaluation);
  }

  json LedgerJson() const {
    const std::uint64_t synthesis =
        result_.manifest.ledger_synthesis + ledger_.count(QueryPurpose::kSynthesis);
    return {{"synthesis", synthesis},
            {"attack_set", ledger_.count(QueryPurpose::kAttackSet)},
            {"evaluation", ledger_.count(QueryPurpose::kEvaluation)},
            {"total", synthesis + ledger_.count(QueryPurpose::kAttackSet) +
                          ledger_.count(QueryPurpose::kEvaluation)}};
  }

  absl::Status WriteManifest() {
    const RunManifest& m = result_.manifest;
    json stages = json::array();
    for (const StageRecord& s : m.stages) {
      json entry = {{"stage", StageName(s.stage)},
                    {"status", s.status},
                    {"seconds", s.seconds}};
      if (!s.error.empty()) entry["error"] = s.error;
      stages.push_back(entry);
    }
    json artifacts = json::array();
    bool all_present = true;
    for (const std::string& a : m.artifacts) {
      const bool exists = fs::exists(root_ / a);
      all_present = all_present && exists;
      artifacts.push_back({{"path", a}, {"exists", exists}});
    }
    json manifest = {
        {"config_hash", absl::StrFormat("%016x", m.config_hash)},
        {"toolkit_version", m.toolkit_version},
        {"seed", config_.seed},
        {"config", config_.entries},
        {"status", result_.status.ok() ? "complete" : "failed"},
        {"stages", stages},
        {"artifacts", artifacts},
        {"artifacts_present", all_present},
        {"ledger", {{"synthesis", m.ledger_synthesis},
                    {"attack_set", m.ledger_attack_set},
                    {"evaluation", m.ledger_evaluation},
                    {"total", m.ledger_total()},
                    {"target_queries", m.target_queries()}}},
        {"disjointness", {{"verified", m.disjointness_verified},
                          {"overlapping_records", m.disjointness_overlaps}}},
        {"truncation_ties", m.truncation_ties},
        {"degenerate_attack_classes", m.degenerate_attack_classes},
        {"wall_clock_seconds", total_seconds_},
        {"floating_point",
         "IEEE-754 binary64, round-to-nearest; no fast-math"},
    };
    if (result_.failed_stage) {
      manifest["failed_stage"] = StageName(*result_.failed_stage);
    }
    if (m.synthesis) {
      const SynthesisBatch& b = *m.synthesis;
      manifest["synthesis"] = {
          {"records", b.successes},
          {"failures", b.failures},
          {"queries", b.queries},
          {"mean_queries_per_record", b.mean_queries_per_success()},
          {"underfilled_classes", b.underfilled_classes}};
    }
    std::error_code ec;
    fs::create_directories(root_, ec);
    std::ofstream out(root_ / "manifest.json");
    out << manifest.dump(2) << "\n";
    if (!out) return absl::DataLossError("cannot write manifest.json");
    return absl::OkStatus();
  }

  RunConfig config_;
  const AuditOptions& options_;
  fs::path root_;
  AuditResult result_;
  CorpusSchema schema_;
  CorpusSchema prior_schema_;
  bool adopted_data_ = false;
  bool adopted_models_ = false;
  bool observed_accuracies_ = true;
  QueryLedger ledger_;
  std::unique_ptr<PredictionService> owned_target_;
  const PredictionService* target_ = nullptr;
  ShadowPlan plan_;
  double total_seconds_ = 0.0;
};

}  // namespace

absl::StatusOr<RunConfig> ParseRunConfig(std::string_view text) {
  absl::StatusOr<RawEntries> raw = ParseRaw(text);
  if (!raw.ok()) return raw.status();
  return BuildConfig(*raw);
}

absl::StatusOr<RunConfig> LoadRunConfig(const std::string& path) {
  std::ifstream in(path);
  if (!in) return absl::NotFoundError(absl::StrCat("cannot open ", path));
  std::stringstream buffer;
  buffer << in.rdbuf();
  return ParseRunConfig(buffer.str());
}

absl::StatusOr<RunConfig> OverrideConfig(const RunConfig& config,
                                         const std::string& key,
                                         const std::string& value) {
  RawEntries raw = EntriesOf(config);
  raw[key] = {value, 0};
  return BuildConfig(raw);
}

std::uint64_t ConfigHash(const RunConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::string_view s) {
    for (unsigned char ch : s) {
      h ^= ch;
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [key, value] : config.entries) {
    if (key == "out" || key == "workers" || key == "remote") continue;
    mix(key);
    mix("=");
    mix(value);
    mix("\n");
  }
  return h;
}

const char* StageName(Stage stage) {
  switch (stage) {
    case Stage::kConfig:
      return "config";
    case Stage::kData:
      return "data";
    case Stage::kTarget:
      return "target";
    case Stage::kShadowData:
      return "shadow_data";
    case Stage::kShadows:
      return "shadows";
    case Stage::kAttack:
      return "attack";
    case Stage::kEvaluation:
      return "evaluation";
    case Stage::kReport:
      return "report";
  }
  return "unknown";
}

int StageExitCode(Stage stage) { return 2 + static_cast<int>(stage); }

AuditResult RunAudit(const RunConfig& config, const AuditOptions& options) {
  AuditRun run(config, options);
  run.Execute(options.stop_after);
  return std::move(run.result());
}

SweepReport RunMitigationSweep(const RunConfig& config,
                               std::function<void(std::string_view)> log) {
  SweepReport report;
  auto say = [&](std::string_view m) {
    if (log) log(m);
  };
  if (config.sweep_filters.empty()) {
    report.status = absl::InvalidArgumentError("sweep.filters is empty");
    return report;
  }
  const fs::path root(config.out_dir);
  const std::vector<SweepCell> cells =
      SweepPlan(config.sweep_filters, config.sweep_lambdas);

  // Shared corpus and split.
  AuditOptions data_options;
  data_options.stop_after = Stage::kData;
  data_options.log = log;
  RunConfig data_config = config;
  data_config.out_dir = (root / "shared").string();
  AuditResult shared = RunAudit(data_config, data_options);
  if (!shared.status.ok()) {
    report.status = shared.status;
    return report;
  }

  // Target and shadows per distinct lambda, trained without output filters.
  std::map<double, AuditResult> trained;
  std::vector<double> order;
  for (const SweepCell& cell : cells) {
    if (trained.count(cell.l2_lambda)) continue;
    order.push_back(cell.l2_lambda);
    absl::StatusOr<RunConfig> c = OverrideConfig(
        config, "target.l2", absl::StrFormat("%.17g", cell.l2_lambda));
    if (c.ok()) c = OverrideConfig(*c, "mitigation", "none");
    AuditResult result;
    if (!c.ok()) {
      result.status = c.status();
    } else {
      c->out_dir = (root / absl::StrFormat("lambda_%d", order.size() - 1)).string();
      say(absl::StrCat("sweep: training target and shadows for lambda ",
                       cell.l2_lambda));
      AuditOptions opts;
      opts.stop_after = Stage::kShadows;
      opts.log = log;
      AuditRun run(*c, opts);
      run.Adopt(shared, /*with_models=*/false);
      run.Execute(Stage::kShadows);
      result = std::move(run.result());
    }
    trained.emplace(cell.l2_lambda, std::move(result));
  }

  for (std::size_t i = 0; i < cells.size(); ++i) {
    const SweepCell& cell = cells[i];
    SweepRow row;
    row.filter = cell.filter;
    row.l2_lambda = cell.l2_lambda;
    const AuditResult& base = trained.at(cell.l2_lambda);
    if (!base.status.ok()) {
      row.status = base.status;
      report.rows.push_back(row);
      continue;
    }
    absl::StatusOr<RunConfig> c = OverrideConfig(
        config, "target.l2", absl::StrFormat("%.17g", cell.l2_lambda));
    if (c.ok()) c = OverrideConfig(*c, "mitigation", cell.filter.ToString());
    if (!c.ok()) {
      row.status = c.status();
      report.rows.push_back(row);
      continue;
    }
    c->out_dir = (root / absl::StrFormat("cell_%d", i)).string();
    say(absl::StrCat("sweep: cell ", i, " filter ", cell.filter.ToString(),
                     " lambda ", cell.l2_lambda));
    AuditOptions opts;
    opts.log = log;
    AuditRun run(*c, opts);
    run.Adopt(base, /*with_models=*/true);
    run.Execute(Stage::kReport);
    AuditResult& r = run.result();
    row.status = r.status;
    if (r.status.ok()) {
      row.target_test_accuracy = r.target_test_accuracy;
      row.attack_accuracy = r.evaluation->overall.accuracy();
      row.attack_precision = r.evaluation->overall.precision();
      row.attack_recall = r.evaluation->overall.recall();
      row.median_class_precision = MedianClassPrecision(*r.evaluation);
    }
    report.rows.push_back(row);
  }

  std::error_code ec;
  fs::create_directories(root / "metrics", ec);
  std::ofstream out(root / "metrics" / "sweep.csv");
  out << "mitigation,l2_lambda,testing_accuracy,attack_total_accuracy,"
         "attack_precision,attack_recall,median_class_precision,status\n";
  json rows = json::array();
  for (const SweepRow& row : report.rows) {
    out << row.filter.ToString() << "," << absl::StrFormat("%g", row.l2_lambda)
        << "," << FormatRate(row.status.ok() ? std::optional<double>(row.target_test_accuracy)
                                             : std::nullopt)
        << "," << FormatRate(row.attack_accuracy) << ","
        << FormatRate(row.attack_precision) << ","
        << FormatRate(row.attack_recall) << ","
        << FormatRate(row.median_class_precision) << ","
        << (row.status.ok() ? "ok" : "failed") << "\n";
    rows.push_back({{"mitigation", row.filter.ToString()},
                    {"l2_lambda", row.l2_lambda},
                    {"testing_accuracy", row.target_test_accuracy},
                    {"attack_total_accuracy", RateJson(row.attack_accuracy)},
                    {"attack_precision", RateJson(row.attack_precision)},
                    {"attack_recall", RateJson(row.attack_recall)},
                    {"status", row.status.ok() ? "ok" : row.status.ToString()}});
  }
  if (!out) report.status = absl::DataLossError("cannot write sweep.csv");
  std::ofstream json_out(root / "metrics" / "sweep.json");
  json_out << json{{"config_hash", absl::StrFormat("%016x", ConfigHash(config))},
                   {"rows", rows}}
                  .dump(2)
           << "\n";
  return report;
}

absl::StatusOr<AttackModelSet> LoadAttackModels(const std::string& directory,
                                                int class_count) {
  AttackModelSet set;
  set.models.resize(static_cast<std::size_t>(class_count));
  bool any = false;
  for (int c = 0; c < class_count; ++c) {
    const fs::path path =
        fs::path(directory) / absl::StrCat("attack_", c, ".bin");
    if (!fs::exists(path)) continue;
    absl::StatusOr<TrainedModel> model = LoadModel(path.string());
    if (!model.ok()) return model.status();
    if (model->architecture.input_dim != static_cast<std::size_t>(class_count) ||
        model->architecture.class_count != 2) {
      return absl::DataLossError(
          absl::StrCat(path.string(), " is not an attack model for ",
                       class_count, " classes"));
    }
    set.architecture = model->architecture;
    set.training = model->training_config;
    set.models[c] = *std::move(model);
    any = true;
  }
  if (!any) {
    return absl::NotFoundError(
        absl::StrCat("no attack models under ", directory));
  }
  return set;
}

}  // namespace mia
