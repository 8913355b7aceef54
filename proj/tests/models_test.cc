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

#include "mia/models.h"

#include <cmath>
#include <numeric>

#include "gradient_check.h"
#include "gtest/gtest.h"
#include "test_util.h"

namespace mia {
namespace {

using testing::CheckGradients;
using testing::ScratchDir;

ModelArchitecture Mlp(std::size_t in, std::size_t hidden, int classes,
                      Activation act = Activation::kTanh) {
  return {ModelKind::kMlp, in, hidden, act, classes};
}

ModelArchitecture Logistic(std::size_t in, int classes) {
  return {ModelKind::kLogisticRegression, in, 0, Activation::kTanh, classes};
}

// Feature x in {-1, 1} spread over noise features; label = [x > 0].
std::vector<DataRecord> ToySeparable(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<DataRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    DataRecord r;
    const double x = rng.Uniform() < 0.5 ? -1.0 : 1.0;
    r.features = {x, rng.Uniform(), rng.Uniform()};
    r.label = x > 0;
    out.push_back(r);
  }
  return out;
}

TrainingConfig Quick(int epochs, double lr = 0.1, std::uint64_t seed = 1) {
  TrainingConfig c;
  c.learning_rate = lr;
  c.max_epochs = epochs;
  c.batch_size = 8;
  c.seed = seed;
  return c;
}

TEST(GradientCheckTest, MlpTanh) {
  ASSERT_OK_AND_ASSIGN(r, CheckGradients(Mlp(5, 7, 4), 40, 0.0, 1));
  EXPECT_EQ(r.points, 40);
  EXPECT_LT(r.max_relative_error, 1e-4);
}

TEST(GradientCheckTest, MlpReluWithPenalty) {
  ASSERT_OK_AND_ASSIGN(
      r, CheckGradients(Mlp(6, 5, 3, Activation::kRelu), 40, 0.01, 2));
  EXPECT_LT(r.max_relative_error, 1e-4);
}

TEST(GradientCheckTest, LogisticRegression) {
  ASSERT_OK_AND_ASSIGN(r, CheckGradients(Logistic(8, 5), 40, 0.0, 3));
  EXPECT_LT(r.max_relative_error, 1e-4);
  ASSERT_OK_AND_ASSIGN(p, CheckGradients(Logistic(8, 5), 40, 0.3, 4));
  EXPECT_LT(p.max_relative_error, 1e-4);
}

TEST(ArchitectureTest, Validation) {
  EXPECT_OK(Mlp(3, 4, 2).Validate());
  EXPECT_FALSE(Mlp(0, 4, 2).Validate().ok());
  EXPECT_FALSE(Mlp(3, 0, 2).Validate().ok());
  EXPECT_FALSE(Mlp(3, 4, 1).Validate().ok());
}

TEST(TrainingConfigTest, Validation) {
  EXPECT_OK(Quick(1).Validate());
  EXPECT_FALSE(Quick(0).Validate().ok());
  TrainingConfig c = Quick(1);
  c.learning_rate = 0;
  EXPECT_FALSE(c.Validate().ok());
  c = Quick(1);
  c.batch_size = 0;
  EXPECT_FALSE(c.Validate().ok());
  c = Quick(1);
  c.l2_lambda = -1;
  EXPECT_FALSE(c.Validate().ok());
  c = Quick(1);
  c.softmax_temperature = 0;
  EXPECT_FALSE(c.Validate().ok());
}

TEST(TrainTest, SeparableToySetReachesFullAccuracy) {
  const std::vector<DataRecord> data = ToySeparable(200, 5);
  // Separable by construction: the sign of feature 0 is the label.
  for (const DataRecord& r : data) ASSERT_EQ(r.label, r.features[0] > 0);
  for (const ModelArchitecture& arch : {Mlp(3, 8, 2), Logistic(3, 2)}) {
    ASSERT_OK_AND_ASSIGN(model, Train(arch, Quick(50), data, {}));
    EXPECT_EQ(model.train_accuracy, 1.0);
    EXPECT_FALSE(model.test_accuracy.has_value());
  }
}

TEST(TrainTest, SingleEpochReturnsValidAccuracies) {
  const std::vector<DataRecord> data = ToySeparable(30, 6);
  ASSERT_OK_AND_ASSIGN(model, Train(Mlp(3, 4, 2), Quick(1), data, data));
  EXPECT_GE(model.train_accuracy, 0.0);
  EXPECT_LE(model.train_accuracy, 1.0);
  ASSERT_TRUE(model.test_accuracy.has_value());
  EXPECT_EQ(*model.test_accuracy, model.train_accuracy);
}

TEST(TrainTest, HugePenaltyShrinksWeights) {
  const std::vector<DataRecord> data = ToySeparable(100, 7);
  TrainingConfig loose = Quick(20, 1e-7);
  TrainingConfig tight = loose;
  tight.l2_lambda = 1e6;
  ModelArchitecture arch = Mlp(3, 6, 2);
  ASSERT_OK_AND_ASSIGN(a, Train(arch, loose, data, {}));
  ASSERT_OK_AND_ASSIGN(b, Train(arch, tight, data, {}));
  for (std::size_t i : PenalizedParameterIndices(arch)) {
    double max_a = 0, max_b = 0;
    for (double v : a.parameters[i].values()) max_a = std::max(max_a, std::abs(v));
    for (double v : b.parameters[i].values()) max_b = std::max(max_b, std::abs(v));
    EXPECT_LT(max_b, max_a) << "parameter " << i;
  }
}

TEST(TrainTest, DivergenceIsReported) {
  std::vector<DataRecord> data = ToySeparable(50, 8);
  for (DataRecord& r : data) r.features[1] = 1e200;
  absl::StatusOr<TrainedModel> model =
      Train(Logistic(3, 2), Quick(5, 10.0), data, {});
  ASSERT_FALSE(model.ok());
  EXPECT_NE(model.status().message().find("diverged"), std::string::npos);
}

TEST(TrainTest, Deterministic) {
  const std::vector<DataRecord> data = ToySeparable(64, 9);
  ASSERT_OK_AND_ASSIGN(a, Train(Mlp(3, 5, 2), Quick(5), data, {}));
  ASSERT_OK_AND_ASSIGN(b, Train(Mlp(3, 5, 2), Quick(5), data, {}));
  EXPECT_EQ(a.parameters, b.parameters);
}

TEST(TrainTest, RejectsBadRecords) {
  EXPECT_FALSE(Train(Mlp(3, 4, 2), Quick(1), {}, {}).ok());
  const std::vector<DataRecord> wrong = {{{1, 0}, 0}};
  EXPECT_FALSE(Train(Mlp(3, 4, 2), Quick(1), wrong, {}).ok());
  const std::vector<DataRecord> label = {{{1, 0, 0}, 2}};
  EXPECT_FALSE(Train(Mlp(3, 4, 2), Quick(1), label, {}).ok());
}

TEST(PredictTest, SumsToOne) {
  const std::vector<DataRecord> data = ToySeparable(40, 10);
  ASSERT_OK_AND_ASSIGN(model, Train(Mlp(3, 4, 2), Quick(3), data, {}));
  Rng rng(1);
  for (int i = 0; i < 50; ++i) {
    const std::vector<double> x = {rng.Uniform(), rng.Uniform(), rng.Uniform()};
    ASSERT_OK_AND_ASSIGN(p, Predict(model, x));
    ASSERT_EQ(p.size(), 2u);
    EXPECT_NEAR(p[0] + p[1], 1.0, 1e-9);
  }
}

TEST(PredictTest, ZeroParametersGiveUniform) {
  TrainedModel model;
  model.architecture = Mlp(4, 3, 5);
  model.parameters = ZeroParameters(model.architecture);
  ASSERT_OK_AND_ASSIGN(p, Predict(model, std::vector<double>{1, 0, 1, 1}));
  for (double v : p) EXPECT_NEAR(v, 0.2, 1e-15);
}

TEST(PredictTest, OverfitModelRecallsTrainingLabels) {
  ASSERT_OK_AND_ASSIGN(corpus, GenerateSyntheticCorpus(
                                   CorpusSchema::Binary(60, 5), 8, 0.45, 3));
  ASSERT_OK_AND_ASSIGN(model, Train(Mlp(60, 32, 5), Quick(60, 0.2), corpus, {}));
  ASSERT_GE(model.train_accuracy, 0.95);
  std::size_t hits = 0;
  for (const DataRecord& r : corpus) {
    ASSERT_OK_AND_ASSIGN(p, Predict(model, r.features));
    hits += static_cast<int>(ArgMax(p)) == r.label;
  }
  EXPECT_GE(static_cast<double>(hits) / corpus.size(), 0.95);
}

TEST(PredictTest, TemperatureFlattensButKeepsArgmax) {
  const std::vector<DataRecord> data = ToySeparable(40, 11);
  ASSERT_OK_AND_ASSIGN(model, Train(Mlp(3, 4, 2), Quick(20), data, {}));
  ASSERT_OK_AND_ASSIGN(hot, WithTemperature(model, 20.0));
  for (const DataRecord& r : data) {
    ASSERT_OK_AND_ASSIGN(p, Predict(model, r.features));
    ASSERT_OK_AND_ASSIGN(q, Predict(hot, r.features));
    EXPECT_EQ(ArgMax(p), ArgMax(q));
    EXPECT_LE(std::abs(q[0] - 0.5), std::abs(p[0] - 0.5) + 1e-12);
  }
  EXPECT_FALSE(WithTemperature(model, 0.0).ok());
}

TEST(AccuracyTest, ConstantClassZeroModel) {
  TrainedModel model;
  model.architecture = Logistic(2, 2);
  model.parameters = ZeroParameters(model.architecture);
  model.parameters[1](0, 0) = 1.0;  // bias favours class 0
  const std::vector<DataRecord> zeros = {{{0, 1}, 0}, {{1, 1}, 0}};
  const std::vector<DataRecord> ones = {{{0, 1}, 1}, {{1, 1}, 1}};
  const std::vector<DataRecord> mixed = {{{0, 1}, 0}, {{1, 1}, 1}};
  EXPECT_EQ(*Accuracy(model, zeros), 1.0);
  EXPECT_EQ(*Accuracy(model, ones), 0.0);
  EXPECT_EQ(*Accuracy(model, mixed), 0.5);
  ASSERT_OK_AND_ASSIGN(per_class, PerClassAccuracy(model, mixed));
  EXPECT_EQ(per_class[0], 1.0);
  EXPECT_EQ(per_class[1], 0.0);
}

TEST(SerializationTest, RoundTripIsExact) {
  const std::vector<DataRecord> data = ToySeparable(40, 12);
  TrainingConfig config = Quick(3);
  config.l2_lambda = 0.25;
  config.softmax_temperature = 3.0;
  ASSERT_OK_AND_ASSIGN(model, Train(Mlp(3, 4, 2, Activation::kRelu), config,
                                    data, data));
  ASSERT_OK_AND_ASSIGN(back, DeserializeModel(SerializeModel(model)));
  EXPECT_EQ(back.parameters, model.parameters);
  EXPECT_EQ(back.architecture.hidden_activation, Activation::kRelu);
  EXPECT_EQ(back.training_config.softmax_temperature, 3.0);
  EXPECT_EQ(back.training_config.l2_lambda, 0.25);
  EXPECT_EQ(back.test_accuracy, model.test_accuracy);
  EXPECT_EQ(SerializeModel(back), SerializeModel(model));

  ScratchDir dir("model");
  EXPECT_OK(SaveModel(model, dir.file("m.bin")));
  ASSERT_OK_AND_ASSIGN(loaded, LoadModel(dir.file("m.bin")));
  EXPECT_EQ(loaded.parameters, model.parameters);
}

TEST(SerializationTest, CorruptionDetected) {
  TrainedModel model;
  model.architecture = Logistic(3, 2);
  model.parameters = ZeroParameters(model.architecture);
  const std::string bytes = SerializeModel(model);
  EXPECT_EQ(DeserializeModel(bytes.substr(0, bytes.size() - 3)).status().code(),
            absl::StatusCode::kDataLoss);
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_EQ(DeserializeModel(bad).status().code(), absl::StatusCode::kDataLoss);
  EXPECT_FALSE(LoadModel("/nonexistent/model.bin").ok());
}

}  // namespace
}  // namespace mia
