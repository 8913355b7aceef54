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

#include "mia/attack.h"

#include <filesystem>
#include <fstream>

#include "absl/strings/str_cat.h"
#include "absl/strings/str_format.h"
#include "mia/numerics.h"
#include "mia/parallel.h"

namespace mia {

MembershipVerdict VerdictFromProbability(double probability) {
  return {probability, probability >= kMembershipThreshold ? Membership::kIn
                                                           : Membership::kOut};
}

absl::StatusOr<AttackModelSet> TrainAttackModels(
    const AttackSets& sets, const ModelArchitecture& arch,
    const TrainingConfig& config, int workers,
    std::vector<int>* degenerate_classes) {
  const std::size_t classes = sets.size();
  if (classes < 2) {
    return absl::InvalidArgumentError("attack sets need at least two classes");
  }
  bool any = false;
  for (const auto& bucket : sets) any = any || !bucket.empty();
  if (!any) return absl::InvalidArgumentError("every attack partition is empty");

  AttackModelSet out;
  out.architecture = arch;
  out.architecture.input_dim = classes;
  out.architecture.class_count = 2;
  out.training = config;
  if (absl::Status s = out.architecture.Validate(); !s.ok()) return s;
  if (absl::Status s = config.Validate(); !s.ok()) return s;

  std::vector<absl::StatusOr<std::optional<TrainedModel>>> results(
      classes, std::optional<TrainedModel>());
  ParallelFor(classes, workers, [&](std::size_t c) {
    if (sets[c].empty()) return;
    std::vector<DataRecord> train;
    train.reserve(sets[c].size());
    for (const AttackRecord& r : sets[c]) {
      if (r.prediction.size() != classes) {
        results[c] = absl::InvalidArgumentError(absl::StrCat(
            "attack record in class ", c, " has a prediction of length ",
            r.prediction.size()));
        return;
      }
      train.push_back({r.prediction, r.membership == Membership::kIn ? 1 : 0});
    }
    TrainingConfig class_config = config;
    class_config.seed = DeriveSeed(config.seed, c);
    absl::StatusOr<TrainedModel> model =
        Train(out.architecture, class_config, train, {});
    if (!model.ok()) {
      results[c] = absl::Status(model.status().code(),
                                absl::StrCat("attack model ", c, ": ",
                                             model.status().message()));
      return;
    }
    results[c] = std::optional<TrainedModel>(*std::move(model));
  });

  out.models.resize(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    if (!results[c].ok()) return results[c].status();
    out.models[c] = *std::move(results[c]);
    if (!out.models[c] && degenerate_classes != nullptr) {
      degenerate_classes->push_back(static_cast<int>(c));
    }
  }
  return out;
}

absl::StatusOr<double> MembershipProbability(
    const AttackModelSet& models, int true_label,
    std::span<const double> prediction) {
  if (true_label < 0 || true_label >= models.class_count()) {
    return absl::InvalidArgumentError(
        absl::StrCat("label ", true_label, " outside [0, ",
                     models.class_count(), ")"));
  }
  const std::optional<TrainedModel>& model = models.models[true_label];
  if (!model) return kMembershipThreshold;
  absl::StatusOr<PredictionVector> p = Predict(*model, prediction);
  if (!p.ok()) return p.status();
  return (*p)[1];
}

absl::StatusOr<MembershipVerdict> InferMembership(
    const AttackModelSet& models, const PredictionService& target,
    const DataRecord& record, QueryLedger* ledger,
    FilteredPrediction* observed) {
  if (record.label < 0 || record.label >= models.class_count()) {
    return absl::InvalidArgumentError(
        absl::StrCat("record label ", record.label, " outside [0, ",
                     models.class_count(), ")"));
  }
  absl::StatusOr<FilteredPrediction> y =
      Query(target, record.features, ledger, QueryPurpose::kEvaluation);
  if (!y.ok()) return y.status();
  absl::StatusOr<double> p =
      MembershipProbability(models, record.label, y->probabilities);
  if (!p.ok()) return p.status();
  if (observed != nullptr) *observed = *std::move(y);
  return VerdictFromProbability(*p);
}

absl::Status WriteVerdictsCsv(const std::string& path,
                              std::span<const EvaluatedVerdict> verdicts) {
  std::ofstream out(path);
  if (!out) return absl::UnavailableError(absl::StrCat("cannot write ", path));
  out << "record_id,true_label,membership_probability,decision,ground_truth\n";
  for (const EvaluatedVerdict& v : verdicts) {
    const char* truth = !v.truth                       ? ""
                        : *v.truth == Membership::kIn ? "in"
                                                      : "out";
    out << absl::StrFormat(
        "%d,%d,%.9f,%s,%s\n", v.record_id, v.true_label,
        v.verdict.membership_probability,
        v.verdict.decision == Membership::kIn ? "in" : "out", truth);
  }
  if (!out) return absl::DataLossError(absl::StrCat("short write to ", path));
  return absl::OkStatus();
}

absl::Status SaveAttackModels(const AttackModelSet& models,
                              const std::string& directory) {
  std::error_code ec;
  std::filesystem::create_directories(directory, ec);
  if (ec) {
    return absl::UnavailableError(
        absl::StrCat("cannot create ", directory, ": ", ec.message()));
  }
  for (int c = 0; c < models.class_count(); ++c) {
    if (!models.models[c]) continue;
    absl::Status s = SaveModel(
        *models.models[c],
        (std::filesystem::path(directory) / absl::StrCat("attack_", c, ".bin"))
            .string());
    if (!s.ok()) return s;
  }
  return absl::OkStatus();
}

}  // namespace mia
