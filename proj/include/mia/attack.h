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

#ifndef MIA_ATTACK_H_
#define MIA_ATTACK_H_

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "mia/blackbox.h"
#include "mia/models.h"
#include "mia/shadows.h"

namespace mia {

inline constexpr double kMembershipThreshold = 0.5;

// One binary in/out classifier per target class, each reading the
// (filtered) prediction vector. A class whose attack partition was empty
// has no model and always answers 0.5.
struct AttackModelSet {
  std::vector<std::optional<TrainedModel>> models;
  ModelArchitecture architecture;
  TrainingConfig training;

  int class_count() const { return static_cast<int>(models.size()); }
};

struct MembershipVerdict {
  double membership_probability = 0.5;
  Membership decision = Membership::kIn;
};

// decision = in iff probability >= 0.5.
MembershipVerdict VerdictFromProbability(double probability);

// `arch` supplies kind, hidden size and activation; dimensions are set from
// the attack sets (input = class count, output = {out, in}). Class c trains
// with seed DeriveSeed(config.seed, c). Empty partitions are listed in
// `degenerate_classes` when non-null.
absl::StatusOr<AttackModelSet> TrainAttackModels(
    const AttackSets& sets, const ModelArchitecture& arch,
    const TrainingConfig& config, int workers = 1,
    std::vector<int>* degenerate_classes = nullptr);

// Routes the prediction to the attack model of `true_label` only.
absl::StatusOr<double> MembershipProbability(const AttackModelSet& models,
                                             int true_label,
                                             std::span<const double> prediction);

// Queries the target exactly once. The observed (filtered) prediction is
// copied to `observed` when non-null.
absl::StatusOr<MembershipVerdict> InferMembership(
    const AttackModelSet& models, const PredictionService& target,
    const DataRecord& record, QueryLedger* ledger,
    FilteredPrediction* observed = nullptr);

struct EvaluatedVerdict {
  std::size_t record_id = 0;
  int true_label = 0;
  MembershipVerdict verdict;
  std::optional<Membership> truth;
};

// record_id,true_label,membership_probability,decision,ground_truth
absl::Status WriteVerdictsCsv(const std::string& path,
                              std::span<const EvaluatedVerdict> verdicts);

absl::Status SaveAttackModels(const AttackModelSet& models,
                              const std::string& directory);

}  // namespace mia

#endif  // MIA_ATTACK_H_
