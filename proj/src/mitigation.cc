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

#include "mia/mitigation.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>

#include "absl/strings/str_cat.h"
#include "mia/numerics.h"

namespace mia {
namespace {

template <typename T>
bool ParseNumber(std::string_view text, T& out) {
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, out);
  return !text.empty() && ec == std::errc() && ptr == end;
}

}  // namespace

absl::Status MitigationFilter::Validate() const {
  switch (kind) {
    case FilterKind::kTopK:
      if (top_k < 1) return absl::InvalidArgumentError("top_k needs k >= 1");
      break;
    case FilterKind::kRound:
      if (digits < 0) {
        return absl::InvalidArgumentError("round needs d >= 0");
      }
      break;
    case FilterKind::kTemperature:
      if (!(temperature > 0.0) || !std::isfinite(temperature)) {
        return absl::InvalidArgumentError("temperature needs t > 0");
      }
      break;
    case FilterKind::kNone:
    case FilterKind::kLabelOnly:
      break;
  }
  return absl::OkStatus();
}

std::string MitigationFilter::ToString() const {
  switch (kind) {
    case FilterKind::kNone:
      return "none";
    case FilterKind::kTopK:
      return absl::StrCat("top_k:", top_k);
    case FilterKind::kLabelOnly:
      return "label_only";
    case FilterKind::kRound:
      return absl::StrCat("round:", digits);
    case FilterKind::kTemperature:
      return absl::StrCat("temperature:", temperature);
  }
  return "none";
}

absl::StatusOr<MitigationFilter> ParseFilter(std::string_view text) {
  const std::size_t colon = text.find(':');
  const std::string_view name = text.substr(0, colon);
  const std::string_view arg =
      colon == std::string_view::npos ? std::string_view() : text.substr(colon + 1);
  MitigationFilter filter;
  if (name == "none" && arg.empty()) {
    filter = MitigationFilter::None();
  } else if (name == "label_only" && arg.empty()) {
    filter = MitigationFilter::LabelOnly();
  } else if (name == "top_k") {
    int k;
    if (!ParseNumber(arg, k)) {
      return absl::InvalidArgumentError(
          absl::StrCat("bad top_k argument in '", std::string(text), "'"));
    }
    filter = MitigationFilter::TopK(k);
  } else if (name == "round") {
    int d;
    if (!ParseNumber(arg, d)) {
      return absl::InvalidArgumentError(
          absl::StrCat("bad round argument in '", std::string(text), "'"));
    }
    filter = MitigationFilter::Round(d);
  } else if (name == "temperature") {
    double t;
    if (!ParseNumber(arg, t)) {
      return absl::InvalidArgumentError(absl::StrCat(
          "bad temperature argument in '", std::string(text), "'"));
    }
    filter = MitigationFilter::Temperature(t);
  } else {
    return absl::InvalidArgumentError(
        absl::StrCat("unknown mitigation filter '", std::string(text), "'"));
  }
  if (absl::Status s = filter.Validate(); !s.ok()) return s;
  return filter;
}

double RoundDown(double p, int digits) {
  if (digits >= 16) return p;
  const double scale = std::pow(10.0, digits);
  double n = std::floor(p * scale);
  // p * scale carries rounding error; settle on the largest n with
  // n / scale <= p so that rounding a rounded value is a no-op.
  while ((n + 1.0) / scale <= p) n += 1.0;
  while (n > 0.0 && n / scale > p) n -= 1.0;
  return n / scale;
}

absl::StatusOr<FilteredPrediction> ApplyFilter(
    const MitigationFilter& filter, std::span<const double> full_vector) {
  if (absl::Status s = filter.Validate(); !s.ok()) return s;
  if (full_vector.empty()) {
    return absl::InvalidArgumentError("empty prediction vector");
  }
  double mass = 0.0;
  for (double v : full_vector) {
    if (!(v >= 0.0 && v <= 1.0)) {
      return absl::InvalidArgumentError(
          absl::StrCat("prediction entry ", v, " outside [0, 1]"));
    }
    mass += v;
  }
  if (mass > 1.0 + 1e-6) {
    return absl::InvalidArgumentError(
        absl::StrCat("prediction vector sums to ", mass));
  }
  const std::size_t n = full_vector.size();
  FilteredPrediction out;
  switch (filter.kind) {
    case FilterKind::kTemperature:
      return absl::FailedPreconditionError(
          "temperature must be configured in the model's softmax layer, "
          "not applied to released probabilities");
    case FilterKind::kNone: {
      out.probabilities.assign(full_vector.begin(), full_vector.end());
      out.labels.resize(n);
      std::iota(out.labels.begin(), out.labels.end(), 0);
      break;
    }
    case FilterKind::kTopK: {
      const std::size_t k =
          std::min(n, static_cast<std::size_t>(filter.top_k));
      std::vector<int> order(n);
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return full_vector[a] > full_vector[b];
      });
      order.resize(k);
      std::sort(order.begin(), order.end());
      out.probabilities.assign(n, 0.0);
      for (int c : order) out.probabilities[c] = full_vector[c];
      out.labels = std::move(order);
      break;
    }
    case FilterKind::kLabelOnly: {
      const std::size_t top = ArgMax(full_vector);
      out.probabilities.assign(n, 0.0);
      out.probabilities[top] = 1.0;
      out.labels = {static_cast<int>(top)};
      break;
    }
    case FilterKind::kRound: {
      out.probabilities.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        out.probabilities[i] = RoundDown(full_vector[i], filter.digits);
      }
      out.labels.resize(n);
      std::iota(out.labels.begin(), out.labels.end(), 0);
      const std::size_t before = ArgMax(full_vector);
      const double top = out.probabilities[before];
      const bool unique_before =
          std::count(full_vector.begin(), full_vector.end(),
                     full_vector[before]) == 1;
      out.truncation_tie =
          unique_before && std::count(out.probabilities.begin(),
                                      out.probabilities.end(), top) > 1;
      break;
    }
  }
  return out;
}

std::vector<SweepCell> SweepPlan(std::span<const MitigationFilter> filters,
                                 std::span<const double> lambdas) {
  std::vector<double> grid_lambdas(lambdas.begin(), lambdas.end());
  if (grid_lambdas.empty()) grid_lambdas.push_back(0.0);
  std::vector<SweepCell> cells;
  cells.reserve(filters.size() * grid_lambdas.size());
  for (const MitigationFilter& f : filters) {
    for (double lambda : grid_lambdas) cells.push_back({f, lambda});
  }
  return cells;
}

}  // namespace mia
