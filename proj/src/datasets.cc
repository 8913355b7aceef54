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

#include "mia/datasets.h"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "absl/strings/str_cat.h"
#include "mia/numerics.h"

namespace mia {
namespace {

std::string_view Trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
    s.remove_prefix(1);
  }
  while (!s.empty() &&
         (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

std::vector<std::string_view> SplitCommas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(Trim(line.substr(start)));
      return out;
    }
    out.push_back(Trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
}

bool ParseInt(std::string_view token, long& out) {
  const char* end = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(token.data(), end, out);
  return ec == std::errc() && ptr == end && !token.empty();
}

bool LooksNumeric(std::string_view token) {
  double v;
  const char* end = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(token.data(), end, v);
  return ec == std::errc() && ptr == end && !token.empty();
}

// Binary feature vectors packed 64 per word for popcount distances.
struct PackedBits {
  std::size_t words = 0;
  std::vector<std::uint64_t> bits;  // records x words

  std::span<const std::uint64_t> row(std::size_t i) const {
    return {bits.data() + i * words, words};
  }
};

PackedBits Pack(std::span<const std::vector<double>> features,
                std::span<const std::size_t> order, std::size_t dimension) {
  PackedBits packed;
  packed.words = (dimension + 63) / 64;
  packed.bits.assign(order.size() * packed.words, 0);
  for (std::size_t i = 0; i < order.size(); ++i) {
    const std::vector<double>& f = features[order[i]];
    for (std::size_t j = 0; j < dimension; ++j) {
      if (f[j] != 0.0) {
        packed.bits[i * packed.words + j / 64] |= std::uint64_t{1} << (j % 64);
      }
    }
  }
  return packed;
}

int Hamming(std::span<const std::uint64_t> a, std::span<const std::uint64_t> b) {
  int d = 0;
  for (std::size_t w = 0; w < a.size(); ++w) d += std::popcount(a[w] ^ b[w]);
  return d;
}

int Mismatches(std::span<const double> a, std::span<const double> b) {
  int d = 0;
  for (std::size_t j = 0; j < a.size(); ++j) d += a[j] != b[j];
  return d;
}

}  // namespace

CorpusSchema CorpusSchema::Binary(std::size_t dimension, int class_count) {
  CorpusSchema schema;
  schema.features.assign(dimension, FeatureSpec::Binary());
  schema.class_count = class_count;
  return schema;
}

bool CorpusSchema::AllBinary() const {
  return std::all_of(features.begin(), features.end(), [](const FeatureSpec& f) {
    return f.kind == FeatureKind::kBinary;
  });
}

absl::Status CorpusSchema::Validate() const {
  if (features.empty()) {
    return absl::InvalidArgumentError("schema dimension must be at least 1");
  }
  if (class_count < 2) {
    return absl::InvalidArgumentError(
        absl::StrCat("schema needs at least 2 classes, got ", class_count));
  }
  for (std::size_t j = 0; j < features.size(); ++j) {
    const FeatureSpec& f = features[j];
    if (f.kind == FeatureKind::kBinary && f.cardinality != 2) {
      return absl::InvalidArgumentError(
          absl::StrCat("binary feature ", j, " must have cardinality 2"));
    }
    if (f.cardinality < 2) {
      return absl::InvalidArgumentError(
          absl::StrCat("feature ", j, " needs at least 2 values"));
    }
  }
  return absl::OkStatus();
}

absl::Status ValidateRecord(const CorpusSchema& schema,
                            const DataRecord& record) {
  if (record.features.size() != schema.dimension()) {
    return absl::InvalidArgumentError(
        absl::StrCat("record has ", record.features.size(),
                     " features, schema declares ", schema.dimension()));
  }
  if (record.label < 0 || record.label >= schema.class_count) {
    return absl::OutOfRangeError(absl::StrCat(
        "label ", record.label, " outside [0, ", schema.class_count, ")"));
  }
  for (std::size_t j = 0; j < record.features.size(); ++j) {
    const double v = record.features[j];
    if (v != std::floor(v) || v < 0 || v >= schema.features[j].cardinality) {
      return absl::InvalidArgumentError(
          absl::StrCat("feature ", j, " value ", v, " not admissible"));
    }
  }
  return absl::OkStatus();
}

absl::StatusOr<std::vector<DataRecord>> LoadCsv(const std::string& path,
                                                const CorpusSchema& schema) {
  if (absl::Status s = schema.Validate(); !s.ok()) return s;
  std::ifstream in(path);
  if (!in) return absl::NotFoundError(absl::StrCat("cannot open ", path));

  std::vector<DataRecord> records;
  std::string line;
  std::size_t line_number = 0;
  bool first_content_line = true;
  const std::size_t arity = schema.dimension() + 1;
  while (std::getline(in, line)) {
    ++line_number;
    if (Trim(line).empty()) continue;
    std::vector<std::string_view> tokens = SplitCommas(line);
    if (first_content_line) {
      first_content_line = false;
      if (!std::all_of(tokens.begin(), tokens.end(), LooksNumeric)) continue;
    }
    if (tokens.size() != arity) {
      return absl::InvalidArgumentError(
          absl::StrCat(path, ":", line_number, ": expected ", arity,
                       " columns, got ", tokens.size()));
    }
    DataRecord record;
    record.features.resize(schema.dimension());
    for (std::size_t j = 0; j < schema.dimension(); ++j) {
      const FeatureSpec& spec = schema.features[j];
      long value;
      if (spec.kind == FeatureKind::kBinary) {
        if (tokens[j] != "0" && tokens[j] != "1") {
          return absl::InvalidArgumentError(
              absl::StrCat(path, ":", line_number, ": binary column ", j,
                           " holds '", std::string(tokens[j]), "'"));
        }
        value = tokens[j] == "1";
      } else if (!ParseInt(tokens[j], value) || value < 0 ||
                 value >= spec.cardinality) {
        return absl::InvalidArgumentError(
            absl::StrCat(path, ":", line_number, ": categorical column ", j,
                         " holds '", std::string(tokens[j]), "'"));
      }
      record.features[j] = static_cast<double>(value);
    }
    long label;
    if (!ParseInt(tokens.back(), label)) {
      return absl::InvalidArgumentError(
          absl::StrCat(path, ":", line_number, ": label '",
                       std::string(tokens.back()), "' is not an integer"));
    }
    if (label < 0 || label >= schema.class_count) {
      return absl::OutOfRangeError(
          absl::StrCat(path, ":", line_number, ": label ", label,
                       " outside [0, ", schema.class_count, ")"));
    }
    record.label = static_cast<int>(label);
    records.push_back(std::move(record));
  }
  return records;
}

absl::Status WriteCsv(const std::string& path,
                      std::span<const DataRecord> records) {
  std::ofstream out(path);
  if (!out) return absl::UnavailableError(absl::StrCat("cannot write ", path));
  std::string line;
  for (const DataRecord& r : records) {
    line.clear();
    for (double v : r.features) {
      absl::StrAppend(&line, static_cast<long>(v), ",");
    }
    absl::StrAppend(&line, r.label, "\n");
    out << line;
  }
  out.flush();
  if (!out) return absl::DataLossError(absl::StrCat("short write to ", path));
  return absl::OkStatus();
}

absl::StatusOr<std::vector<DataRecord>> ClusterToClasses(
    std::span<const std::vector<double>> features, const CorpusSchema& schema,
    int class_count, std::uint64_t seed, int max_iterations) {
  const std::size_t n = features.size();
  if (class_count < 1 || static_cast<std::size_t>(class_count) > n) {
    return absl::InvalidArgumentError(absl::StrCat(
        "cannot form ", class_count, " clusters from ", n, " records"));
  }
  const std::size_t dim = schema.dimension();
  for (const auto& f : features) {
    if (f.size() != dim) {
      return absl::InvalidArgumentError("feature vector arity mismatch");
    }
  }
  const std::size_t k = static_cast<std::size_t>(class_count);

  // Work in lexicographic order so the partition ignores input order.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return features[a] < features[b];
                   });

  // Seed centroids with distinct vectors where possible.
  Rng rng(seed);
  std::vector<std::size_t> candidates(n);
  std::iota(candidates.begin(), candidates.end(), std::size_t{0});
  rng.Shuffle(candidates);
  std::vector<std::size_t> initial;
  std::vector<bool> used(n, false);
  for (std::size_t c : candidates) {
    if (initial.size() == k) break;
    bool duplicate = std::any_of(initial.begin(), initial.end(),
                                 [&](std::size_t o) {
                                   return features[order[o]] ==
                                          features[order[c]];
                                 });
    if (!duplicate) {
      initial.push_back(c);
      used[c] = true;
    }
  }
  for (std::size_t c : candidates) {
    if (initial.size() == k) break;
    if (!used[c]) initial.push_back(c);
  }

  std::vector<std::vector<double>> centroids;
  centroids.reserve(k);
  for (std::size_t c : initial) centroids.push_back(features[order[c]]);

  const bool binary = schema.AllBinary();
  PackedBits packed;
  if (binary) packed = Pack(features, order, dim);

  std::vector<std::size_t> assignment(n, k);
  for (int iter = 0; iter < max_iterations; ++iter) {
    PackedBits packed_centroids;
    if (binary) {
      std::vector<std::size_t> identity(k);
      std::iota(identity.begin(), identity.end(), std::size_t{0});
      packed_centroids = Pack(centroids, identity, dim);
    }
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      int best_distance = std::numeric_limits<int>::max();
      for (std::size_t c = 0; c < k; ++c) {
        const int d =
            binary ? Hamming(packed.row(i), packed_centroids.row(c))
                   : Mismatches(features[order[i]], centroids[c]);
        if (d < best_distance) {
          best_distance = d;
          best = c;
        }
      }
      if (assignment[i] != best) {
        assignment[i] = best;
        changed = true;
      }
    }
    if (!changed) break;

    // Recompute centroids: per-feature majority value; empty clusters keep
    // their previous centroid.
    for (std::size_t c = 0; c < k; ++c) {
      std::vector<std::vector<int>> counts(dim);
      for (std::size_t j = 0; j < dim; ++j) {
        counts[j].assign(schema.features[j].cardinality, 0);
      }
      std::size_t members = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (assignment[i] != c) continue;
        ++members;
        const std::vector<double>& f = features[order[i]];
        for (std::size_t j = 0; j < dim; ++j) {
          ++counts[j][static_cast<std::size_t>(f[j])];
        }
      }
      if (members == 0) continue;
      for (std::size_t j = 0; j < dim; ++j) {
        if (binary) {
          // Mean threshold at 0.5, inclusive.
          centroids[c][j] = 2 * counts[j][1] >= static_cast<int>(members);
        } else {
          centroids[c][j] = static_cast<double>(
              std::max_element(counts[j].begin(), counts[j].end()) -
              counts[j].begin());
        }
      }
    }
  }

  // Name clusters by first appearance in canonical order.
  std::vector<int> rename(k, -1);
  int next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (rename[assignment[i]] < 0) rename[assignment[i]] = next++;
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (rename[c] < 0) rename[c] = next++;
  }

  std::vector<DataRecord> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[order[i]] = DataRecord{features[order[i]], rename[assignment[i]]};
  }
  return out;
}

absl::StatusOr<std::vector<DataRecord>> GenerateSyntheticCorpus(
    const CorpusSchema& schema, std::size_t per_class, double flip_prob,
    std::uint64_t seed) {
  if (absl::Status s = schema.Validate(); !s.ok()) return s;
  if (per_class < 1) {
    return absl::InvalidArgumentError("per_class must be at least 1");
  }
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) {
    return absl::InvalidArgumentError(
        absl::StrCat("flip probability ", flip_prob, " outside [0, 1]"));
  }
  Rng rng(seed);
  const std::size_t dim = schema.dimension();
  std::vector<DataRecord> corpus;
  corpus.reserve(per_class * schema.class_count);
  for (int c = 0; c < schema.class_count; ++c) {
    std::vector<double> centroid(dim);
    for (std::size_t j = 0; j < dim; ++j) {
      centroid[j] = static_cast<double>(
          rng.UniformIndex(schema.features[j].cardinality));
    }
    for (std::size_t r = 0; r < per_class; ++r) {
      DataRecord record{centroid, c};
      for (std::size_t j = 0; j < dim; ++j) {
        if (!rng.Bernoulli(flip_prob)) continue;
        const std::size_t card = schema.features[j].cardinality;
        // Move to a uniformly chosen different value.
        const std::size_t shift = 1 + rng.UniformIndex(card - 1);
        record.features[j] = static_cast<double>(
            (static_cast<std::size_t>(centroid[j]) + shift) % card);
      }
      corpus.push_back(std::move(record));
    }
  }
  return corpus;
}

absl::StatusOr<SplitPlan> MakeSplit(std::size_t corpus_size,
                                    std::size_t train_size,
                                    std::uint64_t seed) {
  if (train_size < 1 || 2 * train_size > corpus_size) {
    return absl::InvalidArgumentError(
        absl::StrCat("corpus of ", corpus_size,
                     " records cannot hold disjoint train/test sets of ",
                     train_size));
  }
  std::vector<std::size_t> indices(corpus_size);
  std::iota(indices.begin(), indices.end(), std::size_t{0});
  Rng rng(seed);
  rng.Shuffle(indices);
  SplitPlan plan;
  plan.target_train.assign(indices.begin(), indices.begin() + train_size);
  plan.target_test.assign(indices.begin() + train_size,
                          indices.begin() + 2 * train_size);
  plan.shadow_pool.assign(indices.begin() + 2 * train_size, indices.end());
  return plan;
}

absl::StatusOr<FeatureMarginals> Marginals(std::span<const DataRecord> records,
                                           const CorpusSchema& schema) {
  if (records.empty()) {
    return absl::InvalidArgumentError("marginals of an empty record list");
  }
  FeatureMarginals marginals(schema.dimension());
  for (std::size_t j = 0; j < schema.dimension(); ++j) {
    marginals[j].assign(schema.features[j].cardinality, 0.0);
  }
  for (const DataRecord& r : records) {
    if (r.features.size() != schema.dimension()) {
      return absl::InvalidArgumentError("record arity mismatch");
    }
    for (std::size_t j = 0; j < schema.dimension(); ++j) {
      const auto v = static_cast<std::size_t>(r.features[j]);
      if (v >= marginals[j].size()) {
        return absl::InvalidArgumentError(
            absl::StrCat("feature ", j, " value out of range"));
      }
      marginals[j][v] += 1.0;
    }
  }
  const double n = static_cast<double>(records.size());
  for (auto& m : marginals) {
    for (double& p : m) p /= n;
  }
  return marginals;
}

std::vector<DataRecord> SelectRecords(std::span<const DataRecord> records,
                                      std::span<const std::size_t> indices) {
  std::vector<DataRecord> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(records[i]);
  return out;
}

}  // namespace mia
