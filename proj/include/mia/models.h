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

#ifndef MIA_MODELS_H_
#define MIA_MODELS_H_

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "mia/datasets.h"
#include "mia/numerics.h"

namespace mia {

enum class ModelKind { kLogisticRegression, kMlp };
enum class Activation { kTanh, kRelu };

struct ModelArchitecture {
  ModelKind kind = ModelKind::kMlp;
  std::size_t input_dim = 0;
  std::size_t hidden_size = 128;  // mlp only
  Activation hidden_activation = Activation::kTanh;
  int class_count = 2;

  absl::Status Validate() const;
};

struct TrainingConfig {
  double learning_rate = 0.001;
  double lr_decay = 1e-7;
  int max_epochs = 100;
  int batch_size = 32;
  double l2_lambda = 0.0;
  // Temperature of the deployed softmax layer. The loss is always optimized
  // at t = 1; prediction uses this value.
  double softmax_temperature = 1.0;
  std::uint64_t seed = 0;

  absl::Status Validate() const;
};

// Parameters are laid out as
//   logistic regression: [W (input x classes), b (1 x classes)]
//   mlp: [W1 (input x hidden), b1 (1 x hidden), W2 (hidden x classes),
//         b2 (1 x classes)]
struct TrainedModel {
  ModelArchitecture architecture;
  std::vector<Matrix> parameters;
  TrainingConfig training_config;
  double train_accuracy = 0.0;
  // Absent when training was given no held-out set.
  std::optional<double> test_accuracy;
};

struct LossAndGradients {
  double loss = 0.0;
  std::vector<Matrix> gradients;  // same layout as the parameters
};

// Zero-filled parameters of the right shapes.
std::vector<Matrix> ZeroParameters(const ModelArchitecture& arch);

// Weights and biases uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)].
std::vector<Matrix> InitializeParameters(const ModelArchitecture& arch,
                                         Rng& rng);

// Indices into the parameter list that carry the L2 penalty (weights only).
std::vector<std::size_t> PenalizedParameterIndices(
    const ModelArchitecture& arch);

absl::Status CheckParameterShapes(const ModelArchitecture& arch,
                                  std::span<const Matrix> params);

absl::StatusOr<std::vector<double>> ComputeLogits(
    const ModelArchitecture& arch, std::span<const Matrix> params,
    std::span<const double> features);

// Regularized cross-entropy at t = 1 over `batch` and its analytic gradient.
absl::StatusOr<LossAndGradients> ComputeLossAndGradients(
    const ModelArchitecture& arch, std::span<const Matrix> params,
    std::span<const DataRecord> batch, double l2_lambda);

// Mini-batch SGD on the regularized cross-entropy. Deterministic given
// config.seed.
absl::StatusOr<TrainedModel> Train(const ModelArchitecture& arch,
                                   const TrainingConfig& config,
                                   std::span<const DataRecord> train,
                                   std::span<const DataRecord> test);

absl::StatusOr<PredictionVector> Predict(const TrainedModel& model,
                                         std::span<const double> features);

absl::StatusOr<double> Accuracy(const TrainedModel& model,
                                std::span<const DataRecord> records);

// Per-class accuracy; nullopt for classes absent from `records`.
absl::StatusOr<std::vector<std::optional<double>>> PerClassAccuracy(
    const TrainedModel& model, std::span<const DataRecord> records);

// Copy of `model` deployed behind a softmax with temperature `t`.
absl::StatusOr<TrainedModel> WithTemperature(const TrainedModel& model,
                                             double t);

// Self-describing little-endian binary encoding; round-trips bit-exactly.
std::string SerializeModel(const TrainedModel& model);
absl::StatusOr<TrainedModel> DeserializeModel(std::string_view bytes);
absl::Status SaveModel(const TrainedModel& model, const std::string& path);
absl::StatusOr<TrainedModel> LoadModel(const std::string& path);

}  // namespace mia

#endif  // MIA_MODELS_H_
