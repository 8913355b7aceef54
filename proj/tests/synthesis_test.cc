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

#include <cmath>
#include <mutex>

#include "gtest/gtest.h"
#include "mia/models.h"
#include "test_util.h"

namespace mia {
namespace {

using testing::FunctionService;
using testing::Hamming;

SynthesisConfig Config(std::uint64_t seed = 1) {
  SynthesisConfig c;
  c.seed = seed;
  return c;
}

TEST(SynthesisConfigTest, Validation) {
  EXPECT_OK(Config().Validate());
  SynthesisConfig c = Config();
  c.k_min = 0;
  EXPECT_FALSE(c.Validate().ok());
  c = Config();
  c.k_min = 200;
  EXPECT_FALSE(c.Validate().ok());
  c = Config();
  c.conf_min = 1.5;
  EXPECT_FALSE(c.Validate().ok());
  c = Config();
  c.iter_max = 0;
  EXPECT_FALSE(c.Validate().ok());
}

TEST(SynthesizeRecordTest, AlwaysConfidentOracleSucceedsAtOnce) {
  FunctionService oracle(20, 3, [](std::span<const double>) {
    return std::vector<double>{0.0, 1.0, 0.0};
  });
  QueryLedger ledger;
  ASSERT_OK_AND_ASSIGN(outcome,
                       SynthesizeRecord(oracle, 1, Config(),
                                        CorpusSchema::Binary(20, 3), &ledger));
  ASSERT_TRUE(outcome.succeeded());
  EXPECT_EQ(outcome.queries_used, 1u);
  EXPECT_EQ(outcome.accepted_confidence, 1.0);
  EXPECT_EQ(ledger.count(QueryPurpose::kSynthesis), 1u);
}

TEST(SynthesizeRecordTest, UniformOracleFailsAfterIterMax) {
  FunctionService oracle(20, 4, [](std::span<const double>) {
    return std::vector<double>(4, 0.25);
  });
  SynthesisConfig config = Config();
  config.conf_min = 0.3;
  config.iter_max = 250;
  QueryLedger ledger;
  ASSERT_OK_AND_ASSIGN(outcome,
                       SynthesizeRecord(oracle, 2, config,
                                        CorpusSchema::Binary(20, 4), &ledger));
  EXPECT_FALSE(outcome.succeeded());
  EXPECT_EQ(outcome.queries_used, 250u);
  EXPECT_EQ(ledger.total(), 250u);
}

// First query scores 0.1, every later one 0.05: one acceptance, then only
// rejections, so the search radius halves every rej_max + 1 queries.
TEST(SynthesizeRecordTest, RadiusHalvesAfterRejectionsAndProposalsFlipK) {
  std::mutex mu;
  std::vector<std::vector<double>> seen;
  FunctionService oracle(200, 2, [&](std::span<const double> x) {
    std::lock_guard<std::mutex> lock(mu);
    seen.emplace_back(x.begin(), x.end());
    const double c = seen.size() == 1 ? 0.1 : 0.05;
    return std::vector<double>{c, 1 - c};
  });
  SynthesisConfig config = Config(3);
  config.iter_max = 120;
  std::vector<SynthesisTraceEvent> events;
  ASSERT_OK_AND_ASSIGN(
      outcome, SynthesizeRecord(oracle, 0, config, CorpusSchema::Binary(200, 2),
                                nullptr, [&](const SynthesisTraceEvent& e) {
                                  events.push_back(e);
                                }));
  EXPECT_FALSE(outcome.succeeded());
  ASSERT_EQ(events.size(), 120u);
  EXPECT_TRUE(events[0].accepted);
  EXPECT_EQ(events[0].k, 128);

  int k = 128;
  int j = 0;
  for (std::size_t i = 1; i < events.size(); ++i) {
    EXPECT_FALSE(events[i].accepted);
    if (++j > config.rej_max) {
      k = std::max(config.k_min, (k + 1) / 2);
      j = 0;
    }
    EXPECT_EQ(events[i].k, k) << "iteration " << i + 1;
    // Query i+1 perturbs the kept record (the first one) by the radius in
    // force after iteration i.
    EXPECT_EQ(Hamming(seen[i], seen[0]),
              static_cast<std::size_t>(events[i - 1].k));
  }
  EXPECT_EQ(events.back().k, config.k_min);
}

TEST(SynthesizeRecordTest, RadiusClampedToDimension) {
  std::vector<std::vector<double>> seen;
  FunctionService oracle(10, 2, [&](std::span<const double> x) {
    seen.emplace_back(x.begin(), x.end());
    return std::vector<double>{seen.size() == 1 ? 0.1 : 0.05, 0.9};
  });
  SynthesisConfig config = Config();
  config.iter_max = 3;
  ASSERT_TRUE(SynthesizeRecord(oracle, 0, config, CorpusSchema::Binary(10, 2),
                               nullptr)
                  .ok());
  EXPECT_EQ(Hamming(seen[1], seen[0]), 10u);
}

TEST(SynthesizeRecordTest, SchemaMismatchRejected) {
  FunctionService oracle(5, 2, [](std::span<const double>) {
    return std::vector<double>{0.5, 0.5};
  });
  EXPECT_FALSE(
      SynthesizeRecord(oracle, 0, Config(), CorpusSchema::Binary(6, 2), nullptr)
          .ok());
  EXPECT_FALSE(
      SynthesizeRecord(oracle, 2, Config(), CorpusSchema::Binary(5, 2), nullptr)
          .ok());
}

TEST(SynthesizeRecordTest, OverfitTargetPostcondition) {
  const CorpusSchema schema = CorpusSchema::Binary(60, 5);
  ASSERT_OK_AND_ASSIGN(corpus, GenerateSyntheticCorpus(schema, 30, 0.2, 4));
  TrainingConfig training;
  training.learning_rate = 0.2;
  training.max_epochs = 40;
  training.seed = 2;
  ASSERT_OK_AND_ASSIGN(
      model, Train({ModelKind::kMlp, 60, 16, Activation::kTanh, 5}, training,
                   corpus, {}));
  ASSERT_OK_AND_ASSIGN(service, LocalService::Create(model));
  SynthesisConfig config = Config(9);
  config.k_max = 16;
  config.k_min = 1;
  const std::vector<double> uniform(5, 1.0);
  QueryLedger ledger;
  ASSERT_OK_AND_ASSIGN(batch, SynthesizeBatch(*service, uniform, 120, config,
                                              schema, &ledger));
  ASSERT_GE(batch.successes, 100u);
  for (const DataRecord& r : batch.records) {
    ASSERT_OK_AND_ASSIGN(p, Predict(model, r.features));
    EXPECT_EQ(static_cast<int>(ArgMax(p)), r.label);
    EXPECT_GE(p[r.label], config.conf_min);
    EXPECT_OK(ValidateRecord(schema, r));
  }
  EXPECT_EQ(batch.queries, ledger.total());
}

TEST(SynthesizeBatchTest, CountZeroRejected) {
  FunctionService oracle(4, 2, [](std::span<const double>) {
    return std::vector<double>{1.0, 0.0};
  });
  const std::vector<double> w = {1, 1};
  EXPECT_FALSE(SynthesizeBatch(oracle, w, 0, Config(),
                               CorpusSchema::Binary(4, 2), nullptr)
                   .ok());
}

TEST(SynthesizeBatchTest, ConfidentOracleYieldsExactCount) {
  FunctionService confident(8, 3, [](std::span<const double>) {
    return std::vector<double>{1.0, 0.0, 0.0};
  });
  const std::vector<double> only_zero = {1, 0, 0};
  QueryLedger ledger;
  ASSERT_OK_AND_ASSIGN(batch, SynthesizeBatch(confident, only_zero, 37, Config(),
                                              CorpusSchema::Binary(8, 3),
                                              &ledger));
  EXPECT_EQ(batch.records.size(), 37u);
  EXPECT_EQ(batch.successes, 37u);
  EXPECT_EQ(batch.failures, 0u);
  EXPECT_DOUBLE_EQ(batch.mean_queries_per_success(),
                   static_cast<double>(ledger.total()) / batch.successes);
  for (const DataRecord& r : batch.records) EXPECT_EQ(r.label, 0);
}

TEST(SynthesizeBatchTest, QuotaFollowsWeightsAndFailuresStopClass) {
  // Class 0 always confident; class 1 never reachable.
  FunctionService oracle(8, 2, [](std::span<const double>) {
    return std::vector<double>{1.0, 0.0};
  });
  SynthesisConfig config = Config();
  config.iter_max = 5;
  const std::vector<double> w = {3, 1};
  ASSERT_OK_AND_ASSIGN(batch, SynthesizeBatch(oracle, w, 8, config,
                                              CorpusSchema::Binary(8, 2),
                                              nullptr, 2));
  EXPECT_EQ(batch.per_class_quota[0], 6u);
  EXPECT_EQ(batch.per_class_quota[1], 2u);
  EXPECT_EQ(batch.per_class_counts[0], 6u);
  EXPECT_EQ(batch.per_class_counts[1], 0u);
  EXPECT_EQ(batch.failures, 2u);
  ASSERT_EQ(batch.underfilled_classes.size(), 1u);
  EXPECT_EQ(batch.underfilled_classes[0], 1);
  EXPECT_EQ(batch.queries, 6u + 2u * 5u);
}

TEST(SynthesizeBatchTest, WorkersDoNotChangeOutput) {
  FunctionService oracle(30, 3, [](std::span<const double> x) {
    double ones = 0;
    for (double v : x) ones += v;
    const double a = ones / 30.0;
    return std::vector<double>{a * 0.9, (1 - a) * 0.9, 0.1};
  });
  SynthesisConfig config = Config(5);
  config.k_max = 8;
  config.k_min = 1;
  const std::vector<double> w = {1, 1, 0};
  ASSERT_OK_AND_ASSIGN(a, SynthesizeBatch(oracle, w, 20, config,
                                          CorpusSchema::Binary(30, 3), nullptr,
                                          5, 1));
  ASSERT_OK_AND_ASSIGN(b, SynthesizeBatch(oracle, w, 20, config,
                                          CorpusSchema::Binary(30, 3), nullptr,
                                          5, 4));
  EXPECT_EQ(a.records, b.records);
  EXPECT_EQ(a.queries, b.queries);
}

TEST(SampleFromMarginalsTest, CertainMarginalsGiveAllOnes) {
  const FeatureMarginals m(7, std::vector<double>{0.0, 1.0});
  for (const auto& x : SampleFromMarginals(m, 50, 1)) {
    for (double v : x) EXPECT_EQ(v, 1.0);
  }
}

TEST(SampleFromMarginalsTest, HalfMarginalsColumnMeans) {
  const FeatureMarginals m(10, std::vector<double>{0.5, 0.5});
  const std::size_t n = 10000;
  const auto samples = SampleFromMarginals(m, n, 2);
  ASSERT_EQ(samples.size(), n);
  const double sigma = std::sqrt(0.25 / n);
  for (std::size_t j = 0; j < 10; ++j) {
    double mean = 0;
    for (const auto& x : samples) mean += x[j];
    EXPECT_NEAR(mean / n, 0.5, 3 * sigma) << "column " << j;
  }
}

TEST(SampleFromMarginalsTest, SameSeedSameBatch) {
  const FeatureMarginals m(12, std::vector<double>{0.3, 0.7});
  EXPECT_EQ(SampleFromMarginals(m, 40, 9), SampleFromMarginals(m, 40, 9));
  EXPECT_NE(SampleFromMarginals(m, 40, 9), SampleFromMarginals(m, 40, 10));
}

TEST(PerturbNoisyRealTest, ZeroIsIdentityOneIsComplement) {
  const CorpusSchema schema = CorpusSchema::Binary(50, 3);
  ASSERT_OK_AND_ASSIGN(corpus, GenerateSyntheticCorpus(schema, 5, 0.3, 1));
  ASSERT_OK_AND_ASSIGN(same, PerturbNoisyReal(corpus, schema, 0.0, 2));
  EXPECT_EQ(same, corpus);
  ASSERT_OK_AND_ASSIGN(flipped, PerturbNoisyReal(corpus, schema, 1.0, 2));
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    EXPECT_EQ(flipped[i].label, corpus[i].label);
    for (std::size_t j = 0; j < 50; ++j) {
      EXPECT_EQ(flipped[i].features[j], 1.0 - corpus[i].features[j]);
    }
  }
}

TEST(PerturbNoisyRealTest, TenPercentOfSixHundredFlipsSixty) {
  const CorpusSchema schema = CorpusSchema::Binary(600, 4);
  ASSERT_OK_AND_ASSIGN(corpus, GenerateSyntheticCorpus(schema, 10, 0.3, 1));
  ASSERT_OK_AND_ASSIGN(noisy, PerturbNoisyReal(corpus, schema, 0.1, 3));
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    EXPECT_EQ(Hamming(noisy[i].features, corpus[i].features), 60u);
  }
}

TEST(PerturbNoisyRealTest, RejectsCategoricalAndBadFraction) {
  CorpusSchema cat;
  cat.features.assign(4, FeatureSpec::Categorical(3));
  cat.class_count = 2;
  const std::vector<DataRecord> records = {{{0, 1, 2, 0}, 0}};
  EXPECT_FALSE(PerturbNoisyReal(records, cat, 0.1, 1).ok());
  const std::vector<DataRecord> binary = {{{0, 1, 1, 0}, 0}};
  EXPECT_FALSE(
      PerturbNoisyReal(binary, CorpusSchema::Binary(4, 2), 1.5, 1).ok());
}

}  // namespace
}  // namespace mia
