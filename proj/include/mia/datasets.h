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

#ifndef MIA_DATASETS_H_
#define MIA_DATASETS_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"

namespace mia {

enum class FeatureKind { kBinary, kCategorical };

struct FeatureSpec {
  FeatureKind kind = FeatureKind::kBinary;
  // Number of admissible values, encoded 0..cardinality-1. Always 2 for
  // binary features.
  int cardinality = 2;

  static FeatureSpec Binary() { return {FeatureKind::kBinary, 2}; }
  static FeatureSpec Categorical(int values) {
    return {FeatureKind::kCategorical, values};
  }
};

// Input/output format of a model: what an attacker is assumed to know.
struct CorpusSchema {
  std::vector<FeatureSpec> features;
  int class_count = 2;

  static CorpusSchema Binary(std::size_t dimension, int class_count);

  std::size_t dimension() const { return features.size(); }
  bool AllBinary() const;
  absl::Status Validate() const;
};

struct DataRecord {
  std::vector<double> features;
  int label = 0;

  friend bool operator==(const DataRecord&, const DataRecord&) = default;
};

// Index sets over one corpus. target_train, target_test and shadow_pool are
// pairwise disjoint and |target_train| == |target_test|.
struct SplitPlan {
  std::vector<std::size_t> target_train;
  std::vector<std::size_t> target_test;
  std::vector<std::size_t> shadow_pool;
};

// Per feature, the empirical frequency of each value 0..cardinality-1.
using FeatureMarginals = std::vector<std::vector<double>>;

absl::Status ValidateRecord(const CorpusSchema& schema,
                            const DataRecord& record);

// Reads `features..., label` rows. A first line that does not parse as
// numbers is treated as a header.
absl::StatusOr<std::vector<DataRecord>> LoadCsv(const std::string& path,
                                                const CorpusSchema& schema);
absl::Status WriteCsv(const std::string& path,
                      std::span<const DataRecord> records);

// Groups unlabeled feature vectors into `class_count` clusters with k-means
// under Hamming distance (mean-threshold centroids for binary features,
// per-feature mode for categorical ones) and labels each record with its
// cluster. The result does not depend on the input order except for label
// names.
absl::StatusOr<std::vector<DataRecord>> ClusterToClasses(
    std::span<const std::vector<double>> features, const CorpusSchema& schema,
    int class_count, std::uint64_t seed, int max_iterations = 50);

// Desk-scale corpus: one random centroid per class, each record a noisy copy
// of its class centroid (each feature moved to a different value with
// probability flip_prob).
absl::StatusOr<std::vector<DataRecord>> GenerateSyntheticCorpus(
    const CorpusSchema& schema, std::size_t per_class, double flip_prob,
    std::uint64_t seed);

absl::StatusOr<SplitPlan> MakeSplit(std::size_t corpus_size,
                                    std::size_t train_size,
                                    std::uint64_t seed);

absl::StatusOr<FeatureMarginals> Marginals(std::span<const DataRecord> records,
                                           const CorpusSchema& schema);

std::vector<DataRecord> SelectRecords(std::span<const DataRecord> records,
                                      std::span<const std::size_t> indices);

}  // namespace mia

#endif  // MIA_DATASETS_H_
