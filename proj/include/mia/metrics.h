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

#ifndef MIA_METRICS_H_
#define MIA_METRICS_H_

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "mia/attack.h"
#include "mia/blackbox.h"
#include "mia/datasets.h"

namespace mia {

inline constexpr double kBaselineAccuracy = 0.5;

struct ConfusionCounts {
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t true_negatives = 0;
  std::size_t false_negatives = 0;

  std::size_t total() const {
    return true_positives + false_positives + true_negatives + false_negatives;
  }
  std::size_t members() const { return true_positives + false_negatives; }
  // nullopt when no record was predicted a member.
  std::optional<double> precision() const;
  // nullopt when there are no members.
  std::optional<double> recall() const;
  std::optional<double> accuracy() const;
};

struct ClassEvaluation {
  int label = 0;
  std::size_t support = 0;  // evaluation records with this true label
  ConfusionCounts counts;
};

struct AttackEvaluation {
  std::vector<ClassEvaluation> per_class;
  ConfusionCounts overall;
  double baseline = kBaselineAccuracy;
};

// Requires ground truth on every verdict and equally many members and
// non-members.
absl::StatusOr<AttackEvaluation> EvaluateAttack(
    std::span<const EvaluatedVerdict> verdicts, int class_count);

// -(1 / ln n) * sum_i p_i ln p_i, with 0 ln 0 = 0.
absl::StatusOr<double> NormalizedEntropy(std::span<const double> p);

struct Observation {
  int label = 0;
  std::vector<double> prediction;
};

struct ClassLeakage {
  int label = 0;
  std::size_t train_support = 0;
  std::size_t test_support = 0;
  // Missing when the class is absent from the corresponding set.
  std::optional<double> train_accuracy;
  std::optional<double> test_accuracy;
  std::optional<double> gap;
};

struct LeakageProfile {
  std::vector<ClassLeakage> per_class;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  double gap = 0.0;
  double member_mean_entropy = 0.0;
  double nonmember_mean_entropy = 0.0;
  double member_mean_correct_probability = 0.0;
  double nonmember_mean_correct_probability = 0.0;
};

// Builds the profile from predictions already observed on members
// (training records) and non-members.
absl::StatusOr<LeakageProfile> LeakageFromObservations(
    std::span<const Observation> members,
    std::span<const Observation> nonmembers, int class_count);

// Queries `target` on the split's train and test records (charged to
// `ledger` as evaluation queries) and profiles the answers.
absl::StatusOr<LeakageProfile> ComputeLeakageProfile(
    const PredictionService& target, std::span<const DataRecord> corpus,
    const SplitPlan& split, QueryLedger* ledger);

struct CdfTable {
  // (value, cumulative fraction) at each distinct value, ascending.
  std::vector<std::pair<double, double>> points;
  std::vector<double> sorted_values;
  std::size_t excluded_undefined = 0;

  // Linear interpolation between order statistics; q in [0, 1].
  double Quantile(double q) const;
};

// Undefined precisions are dropped and counted in excluded_undefined.
absl::StatusOr<CdfTable> PrecisionCdf(
    std::span<const std::optional<double>> per_class_precision);

std::vector<std::optional<double>> PerClassPrecisions(
    const AttackEvaluation& evaluation);

// Median of the defined per-class precisions; nullopt if none is defined.
std::optional<double> MedianClassPrecision(const AttackEvaluation& evaluation);

// Fixed-precision rendering used in every CSV report; "NA" for undefined.
std::string FormatRate(std::optional<double> value);

absl::Status WritePerClassCsv(const std::string& path,
                              const AttackEvaluation& evaluation,
                              const LeakageProfile& leakage);
absl::Status WriteCdfCsv(const std::string& path, const CdfTable& cdf);

}  // namespace mia

#endif  // MIA_METRICS_H_
