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

#ifndef MIA_SYNTHESIS_H_
#define MIA_SYNTHESIS_H_

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "mia/blackbox.h"
#include "mia/datasets.h"

namespace mia {

// Knobs of the hill-climbing synthesizer.
struct SynthesisConfig {
  int k_max = 128;
  int k_min = 4;
  int rej_max = 10;
  double conf_min = 0.2;
  int iter_max = 1000;
  std::uint64_t seed = 0;

  absl::Status Validate() const;
};

struct SynthesisTraceEvent {
  int iteration = 0;  // 1-based
  double class_confidence = 0.0;
  int k = 0;  // radius used for the next proposal
  bool accepted = false;
  bool emitted = false;
};
using SynthesisTrace = std::function<void(const SynthesisTraceEvent&)>;

struct SynthesisOutcome {
  // Empty when the search ran out of iterations.
  std::optional<std::vector<double>> record;
  std::uint64_t queries_used = 0;
  double accepted_confidence = 0.0;

  bool succeeded() const { return record.has_value(); }
};

// Searches for a record the service classifies as `target_class` with
// confidence above conf_min, then samples it with probability equal to that
// confidence. One query per iteration, so queries_used <= iter_max.
//
// Each iteration queries the current proposal x. If y_c >= y*_c the proposal
// is accepted (x* = x, rejection streak reset) and, when c is the argmax
// and y_c > conf_min, emitted with probability y_c. Otherwise the streak
// grows; once it exceeds rej_max, k = max(k_min, ceil(k / 2)). The next
// proposal re-draws k distinct features of x*: binary ones flip and
// categorical ones move to a different value.
absl::StatusOr<SynthesisOutcome> SynthesizeRecord(
    const PredictionService& service, int target_class,
    const SynthesisConfig& config, const CorpusSchema& schema,
    QueryLedger* ledger, const SynthesisTrace& trace = nullptr);

struct SynthesisBatch {
  std::vector<DataRecord> records;  // labeled with the synthesis class
  std::uint64_t queries = 0;        // including failed attempts
  std::size_t successes = 0;
  std::size_t failures = 0;
  std::vector<std::size_t> per_class_counts;
  std::vector<std::size_t> per_class_quota;
  // Classes that stopped short of their quota after repeated failures.
  std::vector<int> underfilled_classes;

  double mean_queries_per_success() const {
    return successes == 0 ? 0.0
                          : static_cast<double>(queries) /
                                static_cast<double>(successes);
  }
};

// Fills `count` records split across classes in proportion to
// `class_weights` (largest-remainder rounding). A class is abandoned after
// `max_consecutive_failures` failed syntheses in a row and reported in
// underfilled_classes.
absl::StatusOr<SynthesisBatch> SynthesizeBatch(
    const PredictionService& service, std::span<const double> class_weights,
    std::size_t count, const SynthesisConfig& config,
    const CorpusSchema& schema, QueryLedger* ledger,
    int max_consecutive_failures = 5, int workers = 1);

// Independent per-feature draws from `marginals`.
std::vector<std::vector<double>> SampleFromMarginals(
    const FeatureMarginals& marginals, std::size_t count, std::uint64_t seed);

// Flips exactly round(flip_fraction * dimension) distinct, uniformly chosen
// features of every record. Binary schemas only.
absl::StatusOr<std::vector<DataRecord>> PerturbNoisyReal(
    std::span<const DataRecord> records, const CorpusSchema& schema,
    double flip_fraction, std::uint64_t seed);

}  // namespace mia

#endif  // MIA_SYNTHESIS_H_
