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

#ifndef MIA_TESTS_TEST_UTIL_H_
#define MIA_TESTS_TEST_UTIL_H_

#include <atomic>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "gmock/gmock.h"
#include "gtest/gtest.h"
#include "mia/blackbox.h"
#include "mia/datasets.h"

namespace mia::testing {

#define ASSERT_OK_AND_ASSIGN(lhs, expr)        \
  auto lhs##_or = (expr);                      \
  ASSERT_TRUE(lhs##_or.ok()) << lhs##_or.status(); \
  auto lhs = *std::move(lhs##_or)

#define EXPECT_OK(expr)                       \
  do {                                        \
    const absl::Status _s = (expr);           \
    EXPECT_TRUE(_s.ok()) << _s;               \
  } while (0)

// Service answering from a plain function of the features.
class FunctionService final : public PredictionService {
 public:
  using Fn = std::function<std::vector<double>(std::span<const double>)>;
  FunctionService(std::size_t dim, int classes, Fn fn)
      : schema_{dim, classes}, fn_(std::move(fn)) {}

  ServiceSchema schema() const override { return schema_; }
  absl::StatusOr<FilteredPrediction> Predict(
      std::span<const double> features) const override {
    calls_.fetch_add(1);
    FilteredPrediction out;
    out.probabilities = fn_(features);
    for (int c = 0; c < schema_.class_count; ++c) out.labels.push_back(c);
    return out;
  }
  std::uint64_t calls() const { return calls_.load(); }

 private:
  ServiceSchema schema_;
  Fn fn_;
  mutable std::atomic<std::uint64_t> calls_{0};
};

// Fresh directory under the gtest temp dir, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& name)
      : path_(std::filesystem::path(::testing::TempDir()) /
              ("mia_" + name + "_" +
               std::to_string(reinterpret_cast<std::uintptr_t>(this)))) {
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const {
    return (path_ / name).string();
  }

 private:
  std::filesystem::path path_;
};

inline std::size_t Hamming(std::span<const double> a,
                           std::span<const double> b) {
  std::size_t d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i] != b[i];
  return d;
}

}  // namespace mia::testing

#endif  // MIA_TESTS_TEST_UTIL_H_
