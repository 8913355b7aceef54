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

#include "mia/metrics.h"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "absl/strings/str_cat.h"
#include "absl/strings/str_format.h"
#include "mia/numerics.h"

namespace mia {
namespace {

std::optional<double> Ratio(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

double Mean(double sum, std::size_t n) {
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

}  // namespace

std::optional<double> ConfusionCounts::precision() const {
  return Ratio(true_positives, true_positives + false_positives);
}

std::optional<double> ConfusionCounts::recall() const {
  return Ratio(true_positives, true_positives + false_negatives);
}

std::optional<double> ConfusionCounts::accuracy() const {
  return Ratio(true_positives + true_negatives, total());
}

absl::StatusOr<AttackEvaluation> EvaluateAttack(
    std::span<const EvaluatedVerdict> verdicts, int class_count) {
  if (verdicts.empty()) {
    return absl::InvalidArgumentError("no verdicts to evaluate");
  }
  if (class_count < 1) {
    return absl::InvalidArgumentError("class_count must be positive");
  }
  AttackEvaluation eval;
  eval.per_class.resize(static_cast<std::size_t>(class_count));
  for (int c = 0; c < class_count; ++c) eval.per_class[c].label = c;
  std::size_t members = 0;
  for (const EvaluatedVerdict& v : verdicts) {
    if (!v.truth) {
      return absl::InvalidArgumentError(
          absl::StrCat("verdict for record ", v.record_id,
                       " lacks ground truth"));
    }
    if (v.true_label < 0 || v.true_label >= class_count) {
      return absl::InvalidArgumentError(
          absl::StrCat("verdict label ", v.true_label, " out of range"));
    }
    const bool is_member = *v.truth == Membership::kIn;
    const bool said_in = v.verdict.decision == Membership::kIn;
    members += is_member;
    ClassEvaluation& cls = eval.per_class[v.true_label];
    ++cls.support;
    for (ConfusionCounts* counts : {&cls.counts, &eval.overall}) {
      if (is_member && said_in) ++counts->true_positives;
      if (!is_member && said_in) ++counts->false_positives;
      if (!is_member && !said_in) ++counts->true_negatives;
      if (is_member && !said_in) ++counts->false_negatives;
    }
  }
  if (2 * members != verdicts.size()) {
    return absl::InvalidArgumentError(
        absl::StrCat("evaluation set is unbalanced: ", members,
                     " members vs ", verdicts.size() - members,
                     " non-members"));
  }
  return eval;
}

absl::StatusOr<double> NormalizedEntropy(std::span<const double> p) {
  if (p.size() < 2) {
    return absl::InvalidArgumentError(
        "normalized entropy needs at least two classes");
  }
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  const double normalized = h / std::log(static_cast<double>(p.size()));
  return std::clamp(normalized, 0.0, 1.0);
}

absl::StatusOr<LeakageProfile> LeakageFromObservations(
    std::span<const Observation> members,
    std::span<const Observation> nonmembers, int class_count) {
  if (members.empty() || nonmembers.empty()) {
    return absl::InvalidArgumentError(
        "leakage profile needs members and non-members");
  }
  const std::size_t classes = static_cast<std::size_t>(class_count);
  std::vector<std::size_t> train_total(classes, 0), train_correct(classes, 0);
  std::vector<std::size_t> test_total(classes, 0), test_correct(classes, 0);
  LeakageProfile profile;

  auto accumulate = [&](std::span<const Observation> obs,
                        std::vector<std::size_t>& total,
                        std::vector<std::size_t>& correct, double& entropy,
                        double& correct_prob) -> absl::Status {
    double entropy_sum = 0.0, prob_sum = 0.0;
    for (const Observation& o : obs) {
      if (o.label < 0 || o.label >= class_count ||
          o.prediction.size() != classes) {
        return absl::InvalidArgumentError("observation does not match schema");
      }
      absl::StatusOr<double> h = NormalizedEntropy(o.prediction);
      if (!h.ok()) return h.status();
      entropy_sum += *h;
      prob_sum += o.prediction[o.label];
      ++total[o.label];
      correct[o.label] += static_cast<int>(ArgMax(o.prediction)) == o.label;
    }
    entropy = Mean(entropy_sum, obs.size());
    correct_prob = Mean(prob_sum, obs.size());
    return absl::OkStatus();
  };
  absl::Status s = accumulate(members, train_total, train_correct,
                              profile.member_mean_entropy,
                              profile.member_mean_correct_probability);
  if (s.ok()) {
    s = accumulate(nonmembers, test_total, test_correct,
                   profile.nonmember_mean_entropy,
                   profile.nonmember_mean_correct_probability);
  }
  if (!s.ok()) return s;

  std::size_t all_train_correct = 0, all_test_correct = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    ClassLeakage cls;
    cls.label = static_cast<int>(c);
    cls.train_support = train_total[c];
    cls.test_support = test_total[c];
    cls.train_accuracy = Ratio(train_correct[c], train_total[c]);
    cls.test_accuracy = Ratio(test_correct[c], test_total[c]);
    if (cls.train_accuracy && cls.test_accuracy) {
      cls.gap = *cls.train_accuracy - *cls.test_accuracy;
    }
    all_train_correct += train_correct[c];
    all_test_correct += test_correct[c];
    profile.per_class.push_back(cls);
  }
  profile.train_accuracy = *Ratio(all_train_correct, members.size());
  profile.test_accuracy = *Ratio(all_test_correct, nonmembers.size());
  profile.gap = profile.train_accuracy - profile.test_accuracy;
  return profile;
}

absl::StatusOr<LeakageProfile> ComputeLeakageProfile(
    const PredictionService& target, std::span<const DataRecord> corpus,
    const SplitPlan& split, QueryLedger* ledger) {
  auto observe = [&](std::span<const std::size_t> indices)
      -> absl::StatusOr<std::vector<Observation>> {
    std::vector<Observation> out;
    for (std::size_t idx : indices) {
      if (idx >= corpus.size()) {
        return absl::OutOfRangeError("split index beyond corpus");
      }
      absl::StatusOr<FilteredPrediction> y = Query(
          target, corpus[idx].features, ledger, QueryPurpose::kEvaluation);
      if (!y.ok()) return y.status();
      out.push_back({corpus[idx].label, std::move(y->probabilities)});
    }
    return out;
  };
  absl::StatusOr<std::vector<Observation>> members = observe(split.target_train);
  if (!members.ok()) return members.status();
  absl::StatusOr<std::vector<Observation>> nonmembers =
      observe(split.target_test);
  if (!nonmembers.ok()) return nonmembers.status();
  return LeakageFromObservations(*members, *nonmembers,
                                 target.schema().class_count);
}

double CdfTable::Quantile(double q) const {
  if (sorted_values.empty()) return 0.0;
  q = std::clamp(q, 0.0, 1.0);
  const double pos = q * static_cast<double>(sorted_values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted_values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted_values[lo] + frac * (sorted_values[hi] - sorted_values[lo]);
}

absl::StatusOr<CdfTable> PrecisionCdf(
    std::span<const std::optional<double>> per_class_precision) {
  if (per_class_precision.empty()) {
    return absl::InvalidArgumentError("no precisions to tabulate");
  }
  CdfTable table;
  for (const std::optional<double>& p : per_class_precision) {
    if (p) {
      table.sorted_values.push_back(*p);
    } else {
      ++table.excluded_undefined;
    }
  }
  std::sort(table.sorted_values.begin(), table.sorted_values.end());
  const double n = static_cast<double>(table.sorted_values.size());
  for (std::size_t i = 0; i < table.sorted_values.size(); ++i) {
    const double v = table.sorted_values[i];
    const double mass = static_cast<double>(i + 1) / n;
    if (!table.points.empty() && table.points.back().first == v) {
      table.points.back().second = mass;
    } else {
      table.points.push_back({v, mass});
    }
  }
  return table;
}

std::vector<std::optional<double>> PerClassPrecisions(
    const AttackEvaluation& evaluation) {
  std::vector<std::optional<double>> out;
  for (const ClassEvaluation& c : evaluation.per_class) {
    // Classes with no evaluation records carry no information.
    if (c.support == 0) continue;
    out.push_back(c.counts.precision());
  }
  return out;
}

std::optional<double> MedianClassPrecision(const AttackEvaluation& evaluation) {
  const std::vector<std::optional<double>> precisions =
      PerClassPrecisions(evaluation);
  if (precisions.empty()) return std::nullopt;
  absl::StatusOr<CdfTable> cdf = PrecisionCdf(precisions);
  if (!cdf.ok() || cdf->sorted_values.empty()) return std::nullopt;
  return cdf->Quantile(0.5);
}

std::string FormatRate(std::optional<double> value) {
  if (!value) return "NA";
  return absl::StrFormat("%.6f", *value);
}

absl::Status WritePerClassCsv(const std::string& path,
                              const AttackEvaluation& evaluation,
                              const LeakageProfile& leakage) {
  std::ofstream out(path);
  if (!out) return absl::UnavailableError(absl::StrCat("cannot write ", path));
  out << "class,support,members,precision,recall,accuracy,"
         "target_train_accuracy,target_test_accuracy,accuracy_gap\n";
  for (std::size_t c = 0; c < evaluation.per_class.size(); ++c) {
    const ClassEvaluation& e = evaluation.per_class[c];
    const ClassLeakage* l =
        c < leakage.per_class.size() ? &leakage.per_class[c] : nullptr;
    out << e.label << "," << e.support << "," << e.counts.members() << ","
        << FormatRate(e.counts.precision()) << ","
        << FormatRate(e.counts.recall()) << ","
        << FormatRate(e.counts.accuracy()) << ","
        << FormatRate(l ? l->train_accuracy : std::nullopt) << ","
        << FormatRate(l ? l->test_accuracy : std::nullopt) << ","
        << FormatRate(l ? l->gap : std::nullopt) << "\n";
  }
  if (!out) return absl::DataLossError(absl::StrCat("short write to ", path));
  return absl::OkStatus();
}

absl::Status WriteCdfCsv(const std::string& path, const CdfTable& cdf) {
  std::ofstream out(path);
  if (!out) return absl::UnavailableError(absl::StrCat("cannot write ", path));
  out << "precision,cumulative_fraction\n";
  for (const auto& [value, mass] : cdf.points) {
    out << FormatRate(value) << "," << FormatRate(mass) << "\n";
  }
  if (!out) return absl::DataLossError(absl::StrCat("short write to ", path));
  return absl::OkStatus();
}

}  // namespace mia
