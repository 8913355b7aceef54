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

#include "mia/numerics.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "absl/strings/str_cat.h"

namespace mia {

absl::StatusOr<Matrix> Matrix::FromValues(std::size_t rows, std::size_t cols,
                                          std::vector<double> values) {
  if (values.size() != rows * cols) {
    return absl::InvalidArgumentError(
        absl::StrCat("matrix ", rows, "x", cols, " needs ", rows * cols,
                     " entries, got ", values.size()));
  }
  for (double v : values) {
    if (!std::isfinite(v)) {
      return absl::InvalidArgumentError("matrix entries must be finite");
    }
  }
  Matrix m;
  m.rows_ = rows;
  m.cols_ = cols;
  m.data_ = std::move(values);
  return m;
}

bool Matrix::AllFinite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double v) { return std::isfinite(v); });
}

void Matrix::Fill(double v) { std::fill(data_.begin(), data_.end(), v); }

double Rng::Uniform() {
  // Top 53 bits -> [0, 1).
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::size_t Rng::UniformIndex(std::size_t n) {
  // Rejection sampling keeps the draw unbiased for any n.
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit =
      std::numeric_limits<std::uint64_t>::max() -
      std::numeric_limits<std::uint64_t>::max() % bound;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return static_cast<std::size_t>(x % bound);
}

std::vector<std::size_t> Rng::SampleWithoutReplacement(std::size_t n,
                                                       std::size_t count) {
  count = std::min(count, n);
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t i = 0; i < count; ++i) {
    std::swap(pool[i], pool[i + UniformIndex(n - i)]);
  }
  pool.resize(count);
  return pool;
}

std::uint64_t DeriveSeed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::size_t ArgMax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

absl::StatusOr<PredictionVector> SoftmaxWithTemperature(
    std::span<const double> logits, double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    return absl::InvalidArgumentError(
        absl::StrCat("softmax temperature must be positive, got ",
                     temperature));
  }
  if (logits.empty()) {
    return absl::InvalidArgumentError("softmax over an empty logit vector");
  }
  const double max_logit = *std::max_element(logits.begin(), logits.end());
  PredictionVector out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp((logits[i] - max_logit) / temperature);
    total += out[i];
  }
  for (double& p : out) p /= total;
  return out;
}

Matrix TanhActivate(const Matrix& x) {
  Matrix out = x;
  for (double& v : out.values()) v = std::tanh(v);
  return out;
}

Matrix ReluActivate(const Matrix& x) {
  Matrix out = x;
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return out;
}

double SquaredNorm(std::span<const Matrix> params) {
  double total = 0.0;
  for (const Matrix& m : params) {
    for (double v : m.values()) total += v * v;
  }
  return total;
}

absl::StatusOr<double> CrossEntropyLoss(
    std::span<const PredictionVector> predictions,
    std::span<const int> labels, std::span<const Matrix> params,
    double lambda) {
  if (predictions.size() != labels.size()) {
    return absl::InvalidArgumentError(
        absl::StrCat(predictions.size(), " predictions but ", labels.size(),
                     " labels"));
  }
  if (lambda < 0.0) {
    return absl::InvalidArgumentError("lambda must be nonnegative");
  }
  double nll = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= predictions[i].size()) {
      return absl::InvalidArgumentError(
          absl::StrCat("label ", label, " out of range for ",
                       predictions[i].size(), " classes"));
    }
    const double p = std::max(predictions[i][label],
                              std::numeric_limits<double>::min());
    nll -= std::log(p);
  }
  const double mean = predictions.empty() ? 0.0 : nll / predictions.size();
  return mean + lambda * SquaredNorm(params);
}

double DecayedLearningRate(double lr, double decay, std::uint64_t step_index) {
  return lr / (1.0 + decay * static_cast<double>(step_index));
}

absl::Status SgdStepInPlace(std::span<Matrix> params,
                            std::span<const Matrix> grads, double lr,
                            double decay, std::uint64_t step_index) {
  if (params.size() != grads.size()) {
    return absl::InvalidArgumentError(
        absl::StrCat(params.size(), " parameter matrices but ", grads.size(),
                     " gradients"));
  }
  if (!(lr > 0.0) || decay < 0.0) {
    return absl::InvalidArgumentError(
        "learning rate must be positive and decay nonnegative");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].SameShape(grads[i])) {
      return absl::InvalidArgumentError(
          absl::StrCat("shape mismatch at parameter ", i, ": ",
                       params[i].rows(), "x", params[i].cols(), " vs ",
                       grads[i].rows(), "x", grads[i].cols()));
    }
  }
  const double rate = DecayedLearningRate(lr, decay, step_index);
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::span<double> p = params[i].values();
    std::span<const double> g = grads[i].values();
    for (std::size_t j = 0; j < p.size(); ++j) p[j] -= rate * g[j];
  }
  return absl::OkStatus();
}

absl::StatusOr<std::vector<Matrix>> SgdStep(std::span<const Matrix> params,
                                            std::span<const Matrix> grads,
                                            double lr, double decay,
                                            std::uint64_t step_index) {
  std::vector<Matrix> updated(params.begin(), params.end());
  absl::Status status = SgdStepInPlace(updated, grads, lr, decay, step_index);
  if (!status.ok()) return status;
  return updated;
}

}  // namespace mia
