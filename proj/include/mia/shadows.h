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

#ifndef MIA_SHADOWS_H_
#define MIA_SHADOWS_H_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "mia/blackbox.h"
#include "mia/datasets.h"
#include "mia/mitigation.h"
#include "mia/models.h"

namespace mia {

// Index sets over the shadow data pool for one shadow model. train and test
// are disjoint and equally sized.
struct ShadowAssignment {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

struct ShadowPlan {
  std::vector<ShadowAssignment> shadows;
  ModelArchitecture architecture;
  TrainingConfig training;  // training.seed is replaced per shadow
  std::uint64_t seed = 0;

  std::size_t shadow_count() const { return shadows.size(); }
};

// Seed of shadow `index`, derived from the plan seed.
std::uint64_t ShadowSeed(std::uint64_t plan_seed, std::size_t index);

// Carves shadow_count train/test pairs of `train_size` records each out of a
// pool. Pairs are disjoint across shadows when the pool is large enough;
// otherwise each shadow samples its own pair and pairs may overlap.
absl::StatusOr<ShadowPlan> MakeShadowPlan(std::size_t pool_size,
                                          std::size_t shadow_count,
                                          std::size_t train_size,
                                          const ModelArchitecture& arch,
                                          const TrainingConfig& training,
                                          std::uint64_t seed);

absl::Status ValidateShadowPlan(const ShadowPlan& plan, std::size_t pool_size);

absl::StatusOr<std::vector<TrainedModel>> TrainShadows(
    const ShadowPlan& plan, std::span<const DataRecord> pool, int workers = 1);

enum class Membership { kOut = 0, kIn = 1 };

struct AttackRecord {
  int true_label = 0;
  std::vector<double> prediction;
  Membership membership = Membership::kOut;
};

// Attack training records bucketed by true label.
using AttackSets = std::vector<std::vector<AttackRecord>>;

// Queries every shadow, through a LocalService carrying `filter`, on its
// own train set (labeled in) and test set (labeled out), and buckets the
// results by true label. Shadows are visited in index order.
absl::StatusOr<AttackSets> BuildAttackSets(std::span<const TrainedModel> shadows,
                                           const ShadowPlan& plan,
                                           std::span<const DataRecord> pool,
                                           const MitigationFilter& filter,
                                           QueryLedger* ledger,
                                           int workers = 1);

// true_label,membership,p_0,...,p_{c-1}; membership is "in" or "out".
absl::Status WriteAttackSetsCsv(const std::string& path,
                                const AttackSets& sets);

}  // namespace mia

#endif  // MIA_SHADOWS_H_
