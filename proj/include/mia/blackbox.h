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

#ifndef MIA_BLACKBOX_H_
#define MIA_BLACKBOX_H_

#include <array>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <thread>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "mia/mitigation.h"
#include "mia/models.h"

namespace httplib {
class Client;
class Server;
}  // namespace httplib

namespace mia {

enum class QueryPurpose { kSynthesis = 0, kAttackSet = 1, kEvaluation = 2 };
inline constexpr std::size_t kQueryPurposeCount = 3;
const char* QueryPurposeName(QueryPurpose purpose);

// Exact per-purpose count of black-box queries. Safe for concurrent use.
class QueryLedger {
 public:
  QueryLedger() = default;
  QueryLedger(const QueryLedger&) = delete;
  QueryLedger& operator=(const QueryLedger&) = delete;

  void Record(QueryPurpose purpose, std::uint64_t n = 1) {
    counts_[static_cast<std::size_t>(purpose)].fetch_add(
        n, std::memory_order_relaxed);
  }
  std::uint64_t count(QueryPurpose purpose) const {
    return counts_[static_cast<std::size_t>(purpose)].load(
        std::memory_order_relaxed);
  }
  std::uint64_t total() const;

 private:
  std::array<std::atomic<std::uint64_t>, kQueryPurposeCount> counts_{};
};

struct ServiceSchema {
  std::size_t input_dim = 0;
  int class_count = 0;
};

// The only surface through which the attack touches a model.
class PredictionService {
 public:
  virtual ~PredictionService() = default;
  virtual ServiceSchema schema() const = 0;
  virtual absl::StatusOr<FilteredPrediction> Predict(
      std::span<const double> features) const = 0;
};

// In-process service over a trained model. A temperature filter is folded
// into the model's softmax; other filters are applied to each response.
class LocalService final : public PredictionService {
 public:
  static absl::StatusOr<std::unique_ptr<LocalService>> Create(
      TrainedModel model, MitigationFilter filter = MitigationFilter::None());

  ServiceSchema schema() const override;
  absl::StatusOr<FilteredPrediction> Predict(
      std::span<const double> features) const override;

 private:
  LocalService(TrainedModel model, MitigationFilter filter)
      : model_(std::move(model)), filter_(filter) {}

  const TrainedModel model_;
  const MitigationFilter filter_;
};

// Client for the JSON-over-HTTP prediction protocol.
//   POST /v1/predict  {"features":[...]} -> {"probabilities":[...],
//                                            "labels":[...],
//                                            "truncation_tie":bool}
//   GET  /v1/schema   -> {"input_dim":N,"class_count":C}
// Transport failures surface as Unavailable (retriable), malformed responses
// as DataLoss, 4xx replies as InvalidArgument.
class RemoteService final : public PredictionService {
 public:
  struct Options {
    int max_retries = 2;
    std::chrono::milliseconds connect_timeout{2000};
    std::chrono::milliseconds read_timeout{30000};
  };

  // Fetches the schema eagerly, so an unreachable endpoint fails here.
  static absl::StatusOr<std::unique_ptr<RemoteService>> Connect(
      const std::string& base_url, Options options);
  static absl::StatusOr<std::unique_ptr<RemoteService>> Connect(
      const std::string& base_url) {
    return Connect(base_url, Options{});
  }
  ~RemoteService() override;

  ServiceSchema schema() const override { return schema_; }
  absl::StatusOr<FilteredPrediction> Predict(
      std::span<const double> features) const override;

 private:
  RemoteService(std::unique_ptr<httplib::Client> client, Options options);

  mutable std::mutex mu_;
  std::unique_ptr<httplib::Client> client_;
  Options options_;
  ServiceSchema schema_;
};

// Issues one query, enforcing the service's input arity, and charges it to
// `ledger` (may be null) under `purpose`.
absl::StatusOr<FilteredPrediction> Query(const PredictionService& service,
                                         std::span<const double> features,
                                         QueryLedger* ledger,
                                         QueryPurpose purpose);

struct RequestLogEntry {
  std::string path;
  int status = 0;
  std::chrono::microseconds latency{0};
};

// HTTP front end for a LocalService. Requests are served concurrently from
// httplib's worker pool; the model is immutable.
class PredictionServer {
 public:
  using RequestLogger = std::function<void(const RequestLogEntry&)>;

  // Binds host:port (port 0 picks a free port) and starts serving in a
  // background thread. A busy port fails with Unavailable.
  static absl::StatusOr<std::unique_ptr<PredictionServer>> Start(
      TrainedModel model, MitigationFilter filter, const std::string& host,
      int port, RequestLogger logger = nullptr);
  ~PredictionServer();

  PredictionServer(const PredictionServer&) = delete;
  PredictionServer& operator=(const PredictionServer&) = delete;

  int port() const { return port_; }
  std::string url() const;
  // Successful /v1/predict responses so far.
  std::uint64_t predictions_served() const {
    return predictions_served_.load(std::memory_order_relaxed);
  }
  // Blocks until Stop() is called from another thread.
  void Wait();
  void Stop();

 private:
  PredictionServer() = default;
  void InstallRoutes();

  std::unique_ptr<LocalService> service_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  std::string host_;
  int port_ = 0;
  RequestLogger logger_;
  std::atomic<std::uint64_t> predictions_served_{0};
};

}  // namespace mia

#endif  // MIA_BLACKBOX_H_
