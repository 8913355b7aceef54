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

#ifndef MIA_NUMERICS_H_
#define MIA_NUMERICS_H_

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "absl/status/statusor.h"

namespace mia {

// Per-class probabilities emitted by a classifier.
using PredictionVector = std::vector<double>;

// Dense row-major matrix of doubles. Vectors (biases, logits) are stored as
// 1 x n matrices.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  static absl::StatusOr<Matrix> FromValues(std::size_t rows, std::size_t cols,
                                           std::vector<double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) {
    return data_[r * cols_ + c];
  }
  double operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  std::span<double> row(std::size_t r) {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  bool SameShape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  bool AllFinite() const;
  void Fill(double v);

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Seeded pseudo-random source. Built on mt19937_64 (whose output sequence is
// fixed by the standard) with hand-rolled conversions, so a seed produces the
// same stream on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t NextU64() { return engine_(); }
  // Uniform in [0, 1).
  double Uniform();
  // Uniform in [0, n). n must be positive.
  std::size_t UniformIndex(std::size_t n);
  bool Bernoulli(double p) { return Uniform() < p; }

  template <typename T>
  void Shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[UniformIndex(i)]);
    }
  }

  // `count` distinct indices from [0, n), in draw order.
  std::vector<std::size_t> SampleWithoutReplacement(std::size_t n,
                                                    std::size_t count);

 private:
  std::mt19937_64 engine_;
};

// Mixes a parent seed with a stream index (splitmix64 finalizer). Used to
// give shadows, attack models and synthesis attempts independent streams.
std::uint64_t DeriveSeed(std::uint64_t seed, std::uint64_t index);

// Index of the largest entry; ties go to the lowest index.
std::size_t ArgMax(std::span<const double> values);

// e^{z_i/t} / sum_j e^{z_j/t}, shifted by max(z) before exponentiation.
absl::StatusOr<PredictionVector> SoftmaxWithTemperature(
    std::span<const double> logits, double temperature);

Matrix TanhActivate(const Matrix& x);
Matrix ReluActivate(const Matrix& x);

// Sum of squared entries over all matrices.
double SquaredNorm(std::span<const Matrix> params);

// Mean negative log-likelihood of `labels` under `predictions`, plus
// lambda * sum(theta^2) over every entry of `params`.
absl::StatusOr<double> CrossEntropyLoss(
    std::span<const PredictionVector> predictions,
    std::span<const int> labels, std::span<const Matrix> params,
    double lambda);

// Learning rate after `step_index` decayed steps: lr / (1 + decay * step).
double DecayedLearningRate(double lr, double decay, std::uint64_t step_index);

// Returns params - lr_eff * grads.
absl::StatusOr<std::vector<Matrix>> SgdStep(std::span<const Matrix> params,
                                            std::span<const Matrix> grads,
                                            double lr, double decay,
                                            std::uint64_t step_index);

// In-place variant used by the training loops.
absl::Status SgdStepInPlace(std::span<Matrix> params,
                            std::span<const Matrix> grads, double lr,
                            double decay, std::uint64_t step_index);

}  // namespace mia

#endif  // MIA_NUMERICS_H_
