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

#ifndef MIA_MITIGATION_H_
#define MIA_MITIGATION_H_

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"

namespace mia {

enum class FilterKind { kNone, kTopK, kLabelOnly, kRound, kTemperature };

// Output-side defense applied to every prediction a service releases.
// Temperature is the exception: it lives in the model's softmax layer and
// is carried here only so sweeps can name it.
struct MitigationFilter {
  FilterKind kind = FilterKind::kNone;
  int top_k = 0;
  int digits = 0;
  double temperature = 1.0;

  static MitigationFilter None() { return {}; }
  static MitigationFilter TopK(int k) { return {FilterKind::kTopK, k, 0, 1.0}; }
  static MitigationFilter LabelOnly() { return {FilterKind::kLabelOnly}; }
  static MitigationFilter Round(int d) {
    return {FilterKind::kRound, 0, d, 1.0};
  }
  static MitigationFilter Temperature(double t) {
    return {FilterKind::kTemperature, 0, 0, t};
  }

  absl::Status Validate() const;
  // Config spelling: none, top_k:3, label_only, round:1, temperature:20.
  std::string ToString() const;

  friend bool operator==(const MitigationFilter&,
                         const MitigationFilter&) = default;
};

absl::StatusOr<MitigationFilter> ParseFilter(std::string_view text);

struct FilteredPrediction {
  // Always class_count long; dropped classes read 0.
  std::vector<double> probabilities;
  // Class indices the response actually reports, ascending.
  std::vector<int> labels;
  // Set when rounding made the top entry tie with another one.
  bool truncation_tie = false;
};

// Largest multiple of 10^-digits that is <= p.
double RoundDown(double p, int digits);

// top_k keeps the k largest entries (ties to the lower class index) without
// renormalizing and clamps k to the class count; label_only reports a
// one-hot vector on the argmax; round truncates every entry. Temperature
// cannot be applied to probabilities and fails with FailedPrecondition.
absl::StatusOr<FilteredPrediction> ApplyFilter(
    const MitigationFilter& filter, std::span<const double> full_vector);

struct SweepCell {
  MitigationFilter filter;
  double l2_lambda = 0.0;
};

// Filter-major cartesian grid; an empty lambda list means {0}.
std::vector<SweepCell> SweepPlan(std::span<const MitigationFilter> filters,
                                 std::span<const double> lambdas);

}  // namespace mia

#endif  // MIA_MITIGATION_H_
