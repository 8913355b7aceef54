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

#include "mia/shadows.h"

#include <fstream>
#include <numeric>
#include <set>

#include "absl/strings/str_cat.h"
#include "mia/numerics.h"
#include "mia/parallel.h"

namespace mia {

std::uint64_t ShadowSeed(std::uint64_t plan_seed, std::size_t index) {
  return DeriveSeed(plan_seed, index);
}

absl::StatusOr<ShadowPlan> MakeShadowPlan(std::size_t pool_size,
                                          std::size_t shadow_count,
                                          std::size_t train_size,
                                          const ModelArchitecture& arch,
                                          const TrainingConfig& training,
                                          std::uint64_t seed) {
  if (shadow_count < 1) {
    return absl::InvalidArgumentError("need at least one shadow model");
  }
  if (train_size < 1 || 2 * train_size > pool_size) {
    return absl::InvalidArgumentError(
        absl::StrCat("shadow pool of ", pool_size,
                     " records cannot hold disjoint train/test sets of ",
                     train_size));
  }
  ShadowPlan plan;
  plan.architecture = arch;
  plan.training = training;
  plan.seed = seed;
  Rng rng(seed);
  const std::size_t per_shadow = 2 * train_size;
  if (per_shadow * shadow_count <= pool_size) {
    std::vector<std::size_t> order(pool_size);
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.Shuffle(order);
    for (std::size_t i = 0; i < shadow_count; ++i) {
      auto begin = order.begin() + i * per_shadow;
      plan.shadows.push_back(
          {std::vector<std::size_t>(begin, begin + train_size),
           std::vector<std::size_t>(begin + train_size, begin + per_shadow)});
    }
  } else {
    for (std::size_t i = 0; i < shadow_count; ++i) {
      std::vector<std::size_t> draw =
          rng.SampleWithoutReplacement(pool_size, per_shadow);
      plan.shadows.push_back(
          {std::vector<std::size_t>(draw.begin(), draw.begin() + train_size),
           std::vector<std::size_t>(draw.begin() + train_size, draw.end())});
    }
  }
  return plan;
}

absl::Status ValidateShadowPlan(const ShadowPlan& plan, std::size_t pool_size) {
  for (std::size_t i = 0; i < plan.shadows.size(); ++i) {
    const ShadowAssignment& a = plan.shadows[i];
    if (a.train.size() != a.test.size() || a.train.empty()) {
      return absl::InvalidArgumentError(absl::StrCat(
          "shadow ", i, " needs equally sized, non-empty train/test sets"));
    }
    std::set<std::size_t> seen;
    for (const auto* indices : {&a.train, &a.test}) {
      for (std::size_t idx : *indices) {
        if (idx >= pool_size) {
          return absl::OutOfRangeError(
              absl::StrCat("shadow ", i, " references record ", idx,
                           " beyond a pool of ", pool_size));
        }
        if (!seen.insert(idx).second) {
          return absl::InvalidArgumentError(absl::StrCat(
              "shadow ", i, " uses record ", idx, " more than once"));
        }
      }
    }
  }
  return absl::OkStatus();
}

absl::StatusOr<std::vector<TrainedModel>> TrainShadows(
    const ShadowPlan& plan, std::span<const DataRecord> pool, int workers) {
  if (absl::Status s = ValidateShadowPlan(plan, pool.size()); !s.ok()) {
    return s;
  }
  const std::size_t k = plan.shadow_count();
  std::vector<absl::StatusOr<TrainedModel>> results(
      k, absl::UnknownError("not trained"));
  ParallelFor(k, workers, [&](std::size_t i) {
    TrainingConfig config = plan.training;
    config.seed = ShadowSeed(plan.seed, i);
    const std::vector<DataRecord> train = SelectRecords(pool, plan.shadows[i].train);
    const std::vector<DataRecord> test = SelectRecords(pool, plan.shadows[i].test);
    results[i] = Train(plan.architecture, config, train, test);
  });
  std::vector<TrainedModel> models;
  models.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    if (!results[i].ok()) {
      return absl::Status(results[i].status().code(),
                          absl::StrCat("shadow ", i, ": ",
                                       results[i].status().message()));
    }
    models.push_back(*std::move(results[i]));
  }
  return models;
}

absl::StatusOr<AttackSets> BuildAttackSets(std::span<const TrainedModel> shadows,
                                           const ShadowPlan& plan,
                                           std::span<const DataRecord> pool,
                                           const MitigationFilter& filter,
                                           QueryLedger* ledger, int workers) {
  if (shadows.size() != plan.shadow_count()) {
    return absl::InvalidArgumentError(
        absl::StrCat(shadows.size(), " shadow models for a plan of ",
                     plan.shadow_count()));
  }
  if (absl::Status s = ValidateShadowPlan(plan, pool.size()); !s.ok()) {
    return s;
  }
  if (shadows.empty()) return absl::InvalidArgumentError("no shadow models");
  const int classes = plan.architecture.class_count;

  struct ShadowRecords {
    absl::Status status;
    std::vector<AttackRecord> records;
  };
  std::vector<ShadowRecords> per_shadow(shadows.size());
  ParallelFor(shadows.size(), workers, [&](std::size_t i) {
    absl::StatusOr<std::unique_ptr<LocalService>> service =
        LocalService::Create(shadows[i], filter);
    if (!service.ok()) {
      per_shadow[i].status = service.status();
      return;
    }
    auto collect = [&](std::span<const std::size_t> indices,
                       Membership membership) -> absl::Status {
      for (std::size_t idx : indices) {
        const DataRecord& r = pool[idx];
        absl::StatusOr<FilteredPrediction> y =
            Query(**service, r.features, ledger, QueryPurpose::kAttackSet);
        if (!y.ok()) return y.status();
        per_shadow[i].records.push_back(
            {r.label, std::move(y->probabilities), membership});
      }
      return absl::OkStatus();
    };
    absl::Status s = collect(plan.shadows[i].train, Membership::kIn);
    if (s.ok()) s = collect(plan.shadows[i].test, Membership::kOut);
    per_shadow[i].status = s;
  });

  AttackSets sets(static_cast<std::size_t>(classes));
  for (ShadowRecords& shadow : per_shadow) {
    if (!shadow.status.ok()) return shadow.status;
    for (AttackRecord& r : shadow.records) {
      if (r.true_label < 0 || r.true_label >= classes) {
        return absl::InvalidArgumentError(
            absl::StrCat("pool record label ", r.true_label, " out of range"));
      }
      sets[r.true_label].push_back(std::move(r));
    }
  }
  return sets;
}

absl::Status WriteAttackSetsCsv(const std::string& path,
                                const AttackSets& sets) {
  std::ofstream out(path);
  if (!out) return absl::UnavailableError(absl::StrCat("cannot write ", path));
  for (const auto& bucket : sets) {
    for (const AttackRecord& r : bucket) {
      std::string line = absl::StrCat(
          r.true_label, ",", r.membership == Membership::kIn ? "in" : "out");
      for (double p : r.prediction) absl::StrAppend(&line, ",", p);
      out << line << "\n";
    }
  }
  if (!out) return absl::DataLossError(absl::StrCat("short write to ", path));
  return absl::OkStatus();
}

}  // namespace mia
