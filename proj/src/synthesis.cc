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

#include "mia/synthesis.h"

#include <algorithm>
#include <cmath>

#include "absl/strings/str_cat.h"
#include "mia/numerics.h"
#include "mia/parallel.h"

namespace mia {
namespace {

std::vector<double> RandomRecord(const CorpusSchema& schema, Rng& rng) {
  std::vector<double> x(schema.dimension());
  for (std::size_t j = 0; j < x.size(); ++j) {
    x[j] = static_cast<double>(rng.UniformIndex(schema.features[j].cardinality));
  }
  return x;
}

std::vector<double> Perturb(const std::vector<double>& base, std::size_t k,
                            const CorpusSchema& schema, Rng& rng) {
  std::vector<double> x = base;
  for (std::size_t j : rng.SampleWithoutReplacement(x.size(), k)) {
    const std::size_t card = schema.features[j].cardinality;
    const std::size_t shift = 1 + rng.UniformIndex(card - 1);
    x[j] = static_cast<double>((static_cast<std::size_t>(x[j]) + shift) % card);
  }
  return x;
}

// Largest-remainder apportionment of `count` over `weights`.
std::vector<std::size_t> Apportion(std::span<const double> weights,
                                   std::size_t count) {
  double total = 0.0;
  for (double w : weights) total += w;
  std::vector<std::size_t> quota(weights.size(), 0);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < weights.size(); ++c) {
    const double exact = count * weights[c] / total;
    quota[c] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[c];
    remainders.push_back({exact - std::floor(exact), c});
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < count; ++i, ++assigned) {
    ++quota[remainders[i % remainders.size()].second];
  }
  return quota;
}

}  // namespace

absl::Status SynthesisConfig::Validate() const {
  if (k_min < 1) return absl::InvalidArgumentError("k_min must be >= 1");
  if (k_min > k_max) {
    return absl::InvalidArgumentError("k_min must not exceed k_max");
  }
  if (rej_max < 0) return absl::InvalidArgumentError("rej_max must be >= 0");
  if (!(conf_min > 0.0 && conf_min < 1.0)) {
    return absl::InvalidArgumentError("conf_min must lie in (0, 1)");
  }
  if (iter_max < 1) return absl::InvalidArgumentError("iter_max must be >= 1");
  return absl::OkStatus();
}

absl::StatusOr<SynthesisOutcome> SynthesizeRecord(
    const PredictionService& service, int target_class,
    const SynthesisConfig& config, const CorpusSchema& schema,
    QueryLedger* ledger, const SynthesisTrace& trace) {
  if (absl::Status s = config.Validate(); !s.ok()) return s;
  if (absl::Status s = schema.Validate(); !s.ok()) return s;
  if (target_class < 0 || target_class >= schema.class_count) {
    return absl::InvalidArgumentError(
        absl::StrCat("target class ", target_class, " outside [0, ",
                     schema.class_count, ")"));
  }
  const ServiceSchema service_schema = service.schema();
  if (service_schema.input_dim != schema.dimension() ||
      service_schema.class_count != schema.class_count) {
    return absl::InvalidArgumentError(
        "service schema does not match the corpus schema");
  }

  Rng rng(config.seed);
  const int dim = static_cast<int>(schema.dimension());
  SynthesisOutcome outcome;
  std::vector<double> x = RandomRecord(schema, rng);
  std::vector<double> best = x;
  double best_confidence = 0.0;
  int rejections = 0;
  int k = config.k_max;

  for (int iteration = 1; iteration <= config.iter_max; ++iteration) {
    absl::StatusOr<FilteredPrediction> y =
        Query(service, x, ledger, QueryPurpose::kSynthesis);
    if (!y.ok()) {
      return absl::Status(
          y.status().code(),
          absl::StrCat("synthesis query failed after ", outcome.queries_used,
                       " queries: ", y.status().message()));
    }
    ++outcome.queries_used;
    const std::vector<double>& probs = y->probabilities;
    const double y_c = probs[target_class];

    SynthesisTraceEvent event;
    event.iteration = iteration;
    event.class_confidence = y_c;
    if (y_c >= best_confidence) {
      event.accepted = true;
      if (y_c > config.conf_min &&
          static_cast<int>(ArgMax(probs)) == target_class &&
          rng.Uniform() < y_c) {
        event.emitted = true;
        event.k = k;
        if (trace) trace(event);
        outcome.record = std::move(x);
        outcome.accepted_confidence = y_c;
        return outcome;
      }
      best = x;
      best_confidence = y_c;
      rejections = 0;
    } else if (++rejections > config.rej_max) {
      k = std::max(config.k_min, (k + 1) / 2);
      rejections = 0;
    }
    event.k = k;
    if (trace) trace(event);
    x = Perturb(best, static_cast<std::size_t>(std::min(k, dim)), schema, rng);
  }
  return outcome;
}

absl::StatusOr<SynthesisBatch> SynthesizeBatch(
    const PredictionService& service, std::span<const double> class_weights,
    std::size_t count, const SynthesisConfig& config,
    const CorpusSchema& schema, QueryLedger* ledger,
    int max_consecutive_failures, int workers) {
  if (count < 1) return absl::InvalidArgumentError("count must be >= 1");
  if (absl::Status s = config.Validate(); !s.ok()) return s;
  if (class_weights.size() != static_cast<std::size_t>(schema.class_count)) {
    return absl::InvalidArgumentError(
        "class distribution must have one weight per class");
  }
  double total_weight = 0.0;
  for (double w : class_weights) {
    if (!(w >= 0.0)) {
      return absl::InvalidArgumentError("class weights must be nonnegative");
    }
    total_weight += w;
  }
  if (!(total_weight > 0.0)) {
    return absl::InvalidArgumentError("class weights sum to zero");
  }
  if (max_consecutive_failures < 1) {
    return absl::InvalidArgumentError("max_consecutive_failures must be >= 1");
  }

  const std::size_t classes = class_weights.size();
  struct ClassResult {
    absl::Status status;
    std::vector<std::vector<double>> records;
    std::uint64_t queries = 0;
    std::size_t failures = 0;
    bool underfilled = false;
  };
  SynthesisBatch batch;
  batch.per_class_quota = Apportion(class_weights, count);
  std::vector<ClassResult> results(classes);

  ParallelFor(classes, workers, [&](std::size_t c) {
    ClassResult& result = results[c];
    int consecutive_failures = 0;
    std::uint64_t attempt = 0;
    while (result.records.size() < batch.per_class_quota[c]) {
      SynthesisConfig attempt_config = config;
      attempt_config.seed = DeriveSeed(DeriveSeed(config.seed, c), attempt++);
      absl::StatusOr<SynthesisOutcome> outcome = SynthesizeRecord(
          service, static_cast<int>(c), attempt_config, schema, ledger);
      if (!outcome.ok()) {
        result.status = outcome.status();
        return;
      }
      result.queries += outcome->queries_used;
      if (outcome->succeeded()) {
        result.records.push_back(*std::move(outcome->record));
        consecutive_failures = 0;
      } else {
        ++result.failures;
        if (++consecutive_failures >= max_consecutive_failures) {
          result.underfilled = true;
          return;
        }
      }
    }
  });

  batch.per_class_counts.assign(classes, 0);
  for (std::size_t c = 0; c < classes; ++c) {
    ClassResult& result = results[c];
    if (!result.status.ok()) return result.status;
    batch.queries += result.queries;
    batch.failures += result.failures;
    batch.successes += result.records.size();
    batch.per_class_counts[c] = result.records.size();
    if (result.underfilled) batch.underfilled_classes.push_back(static_cast<int>(c));
    for (auto& features : result.records) {
      batch.records.push_back(DataRecord{std::move(features), static_cast<int>(c)});
    }
  }
  return batch;
}

std::vector<std::vector<double>> SampleFromMarginals(
    const FeatureMarginals& marginals, std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<double>> out(count,
                                       std::vector<double>(marginals.size()));
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t j = 0; j < marginals.size(); ++j) {
      const std::vector<double>& dist = marginals[j];
      const double u = rng.Uniform();
      double cumulative = 0.0;
      // Falls back to the last value with positive mass when rounding in
      // the running sum leaves u above the final cumulative value.
      std::size_t value = dist.size() - 1;
      while (value > 0 && dist[value] == 0.0) --value;
      for (std::size_t v = 0; v < dist.size(); ++v) {
        cumulative += dist[v];
        if (u < cumulative) {
          value = v;
          break;
        }
      }
      out[i][j] = static_cast<double>(value);
    }
  }
  return out;
}

absl::StatusOr<std::vector<DataRecord>> PerturbNoisyReal(
    std::span<const DataRecord> records, const CorpusSchema& schema,
    double flip_fraction, std::uint64_t seed) {
  if (!schema.AllBinary()) {
    return absl::InvalidArgumentError(
        "noisy-real perturbation needs an all-binary schema");
  }
  if (!(flip_fraction >= 0.0 && flip_fraction <= 1.0)) {
    return absl::InvalidArgumentError(
        absl::StrCat("flip fraction ", flip_fraction, " outside [0, 1]"));
  }
  const std::size_t dim = schema.dimension();
  const auto flips = static_cast<std::size_t>(
      std::llround(flip_fraction * static_cast<double>(dim)));
  Rng rng(seed);
  std::vector<DataRecord> out(records.begin(), records.end());
  for (DataRecord& r : out) {
    if (r.features.size() != dim) {
      return absl::InvalidArgumentError("record arity mismatch");
    }
    for (std::size_t j : rng.SampleWithoutReplacement(dim, flips)) {
      r.features[j] = r.features[j] == 0.0 ? 1.0 : 0.0;
    }
  }
  return out;
}

}  // namespace mia
