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

#include "mia/blackbox.h"

#include <cmath>
#include <utility>

#include "absl/strings/str_cat.h"
#include "httplib.h"
#include "json.hpp"

namespace mia {
namespace {

using json = nlohmann::json;

constexpr char kJsonContentType[] = "application/json";

thread_local std::chrono::steady_clock::time_point request_start;

std::string ErrorBody(std::string_view code, std::string_view message) {
  return json{{"error", {{"code", code}, {"message", message}}}}.dump();
}

absl::StatusOr<FilteredPrediction> ParsePredictionResponse(
    const std::string& body, int class_count) {
  json parsed = json::parse(body, nullptr, /*allow_exceptions=*/false);
  if (parsed.is_discarded() || !parsed.is_object()) {
    return absl::DataLossError("prediction response is not a JSON object");
  }
  auto probs = parsed.find("probabilities");
  auto labels = parsed.find("labels");
  if (probs == parsed.end() || !probs->is_array() || labels == parsed.end() ||
      !labels->is_array()) {
    return absl::DataLossError(
        "prediction response lacks probabilities/labels arrays");
  }
  FilteredPrediction out;
  for (const json& p : *probs) {
    if (!p.is_number()) {
      return absl::DataLossError("non-numeric probability in response");
    }
    const double v = p.get<double>();
    if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
      return absl::DataLossError(
          absl::StrCat("probability ", v, " outside [0, 1]"));
    }
    out.probabilities.push_back(v);
  }
  for (const json& l : *labels) {
    if (!l.is_number_integer()) {
      return absl::DataLossError("non-integer label in response");
    }
    const int label = l.get<int>();
    if (label < 0 || label >= class_count) {
      return absl::DataLossError(
          absl::StrCat("label ", label, " out of range in response"));
    }
    out.labels.push_back(label);
  }
  if (out.probabilities.size() != static_cast<std::size_t>(class_count)) {
    return absl::DataLossError(
        absl::StrCat("response carries ", out.probabilities.size(),
                     " probabilities, schema declares ", class_count));
  }
  if (auto tie = parsed.find("truncation_tie");
      tie != parsed.end() && tie->is_boolean()) {
    out.truncation_tie = tie->get<bool>();
  }
  return out;
}

absl::Status StatusFromErrorReply(const httplib::Result& result) {
  std::string reason = result->body;
  json parsed = json::parse(result->body, nullptr, false);
  if (!parsed.is_discarded() && parsed.contains("error") &&
      parsed["error"].contains("message")) {
    reason = parsed["error"]["message"].get<std::string>();
  }
  const std::string message =
      absl::StrCat("service replied ", result->status, ": ", reason);
  if (result->status >= 400 && result->status < 500) {
    return absl::InvalidArgumentError(message);
  }
  return absl::UnavailableError(message);
}

}  // namespace

const char* QueryPurposeName(QueryPurpose purpose) {
  switch (purpose) {
    case QueryPurpose::kSynthesis:
      return "synthesis";
    case QueryPurpose::kAttackSet:
      return "attack_set";
    case QueryPurpose::kEvaluation:
      return "evaluation";
  }
  return "unknown";
}

std::uint64_t QueryLedger::total() const {
  std::uint64_t sum = 0;
  for (const auto& c : counts_) sum += c.load(std::memory_order_relaxed);
  return sum;
}

absl::StatusOr<std::unique_ptr<LocalService>> LocalService::Create(
    TrainedModel model, MitigationFilter filter) {
  if (absl::Status s = filter.Validate(); !s.ok()) return s;
  if (filter.kind == FilterKind::kTemperature) {
    absl::StatusOr<TrainedModel> heated =
        WithTemperature(model, filter.temperature);
    if (!heated.ok()) return heated.status();
    model = *std::move(heated);
    filter = MitigationFilter::None();
  }
  return std::unique_ptr<LocalService>(
      new LocalService(std::move(model), filter));
}

ServiceSchema LocalService::schema() const {
  return {model_.architecture.input_dim, model_.architecture.class_count};
}

absl::StatusOr<FilteredPrediction> LocalService::Predict(
    std::span<const double> features) const {
  absl::StatusOr<PredictionVector> full = mia::Predict(model_, features);
  if (!full.ok()) return full.status();
  return ApplyFilter(filter_, *full);
}

RemoteService::RemoteService(std::unique_ptr<httplib::Client> client,
                             Options options)
    : client_(std::move(client)), options_(options) {}

RemoteService::~RemoteService() = default;

absl::StatusOr<std::unique_ptr<RemoteService>> RemoteService::Connect(
    const std::string& base_url, Options options) {
  auto client = std::make_unique<httplib::Client>(base_url);
  if (!client->is_valid()) {
    return absl::InvalidArgumentError(
        absl::StrCat("invalid service URL '", base_url, "'"));
  }
  client->set_keep_alive(true);
  client->set_connection_timeout(options.connect_timeout);
  client->set_read_timeout(options.read_timeout);

  std::unique_ptr<RemoteService> service(
      new RemoteService(std::move(client), options));
  httplib::Result result = service->client_->Get("/v1/schema");
  if (!result) {
    return absl::UnavailableError(
        absl::StrCat("cannot reach ", base_url, ": ",
                     httplib::to_string(result.error())));
  }
  if (result->status != 200) return StatusFromErrorReply(result);
  json parsed = json::parse(result->body, nullptr, false);
  if (parsed.is_discarded() || !parsed.is_object() ||
      !parsed.contains("input_dim") || !parsed.contains("class_count") ||
      !parsed["input_dim"].is_number_unsigned() ||
      !parsed["class_count"].is_number_integer()) {
    return absl::DataLossError("malformed schema response");
  }
  service->schema_.input_dim = parsed["input_dim"].get<std::size_t>();
  service->schema_.class_count = parsed["class_count"].get<int>();
  if (service->schema_.class_count < 2 || service->schema_.input_dim < 1) {
    return absl::DataLossError("schema response declares an empty model");
  }
  return service;
}

absl::StatusOr<FilteredPrediction> RemoteService::Predict(
    std::span<const double> features) const {
  const std::string body =
      json{{"features", std::vector<double>(features.begin(), features.end())}}
          .dump();
  absl::Status last_error;
  for (int attempt = 0; attempt <= options_.max_retries; ++attempt) {
    httplib::Result result = [&] {
      std::lock_guard<std::mutex> lock(mu_);
      return client_->Post("/v1/predict", body, kJsonContentType);
    }();
    if (!result) {
      last_error = absl::UnavailableError(absl::StrCat(
          "transport failure: ", httplib::to_string(result.error())));
      continue;
    }
    if (result->status != 200) {
      absl::Status s = StatusFromErrorReply(result);
      if (!absl::IsUnavailable(s)) return s;
      last_error = s;
      continue;
    }
    return ParsePredictionResponse(result->body, schema_.class_count);
  }
  return last_error;
}

absl::StatusOr<FilteredPrediction> Query(const PredictionService& service,
                                         std::span<const double> features,
                                         QueryLedger* ledger,
                                         QueryPurpose purpose) {
  const ServiceSchema schema = service.schema();
  if (features.size() != schema.input_dim) {
    return absl::InvalidArgumentError(
        absl::StrCat("query has ", features.size(),
                     " features, service expects ", schema.input_dim));
  }
  absl::StatusOr<FilteredPrediction> result = service.Predict(features);
  if (result.ok() && ledger != nullptr) ledger->Record(purpose);
  return result;
}

absl::StatusOr<std::unique_ptr<PredictionServer>> PredictionServer::Start(
    TrainedModel model, MitigationFilter filter, const std::string& host,
    int port, RequestLogger logger) {
  absl::StatusOr<std::unique_ptr<LocalService>> service =
      LocalService::Create(std::move(model), filter);
  if (!service.ok()) return service.status();

  std::unique_ptr<PredictionServer> server(new PredictionServer());
  server->service_ = *std::move(service);
  server->server_ = std::make_unique<httplib::Server>();
  server->host_ = host;
  server->logger_ = std::move(logger);
  server->InstallRoutes();
  // Plain SO_REUSEADDR only; SO_REUSEPORT would let two servers share a port.
  server->server_->set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });

  if (port == 0) {
    const int bound = server->server_->bind_to_any_port(host);
    if (bound <= 0) {
      return absl::UnavailableError(
          absl::StrCat("cannot bind any port on ", host));
    }
    server->port_ = bound;
  } else {
    if (!server->server_->bind_to_port(host, port)) {
      return absl::UnavailableError(
          absl::StrCat("cannot bind ", host, ":", port, " (port busy?)"));
    }
    server->port_ = port;
  }
  httplib::Server* raw = server->server_.get();
  server->thread_ = std::thread([raw] { raw->listen_after_bind(); });
  raw->wait_until_ready();
  return server;
}

PredictionServer::~PredictionServer() { Stop(); }

std::string PredictionServer::url() const {
  return absl::StrCat("http://", host_, ":", port_);
}

void PredictionServer::Wait() {
  if (thread_.joinable()) thread_.join();
}

void PredictionServer::Stop() {
  if (server_) server_->stop();
  Wait();
}

void PredictionServer::InstallRoutes() {
  server_->Get("/v1/schema", [this](const httplib::Request&,
                                    httplib::Response& res) {
    const ServiceSchema schema = service_->schema();
    res.set_content(json{{"input_dim", schema.input_dim},
                         {"class_count", schema.class_count}}
                        .dump(),
                    kJsonContentType);
  });

  server_->Post("/v1/predict", [this](const httplib::Request& req,
                                      httplib::Response& res) {
    json parsed = json::parse(req.body, nullptr, false);
    if (parsed.is_discarded() || !parsed.is_object() ||
        !parsed.contains("features") || !parsed["features"].is_array()) {
      res.status = 400;
      res.set_content(ErrorBody("malformed_request",
                                "body must be {\"features\": [numbers]}"),
                      kJsonContentType);
      return;
    }
    std::vector<double> features;
    for (const json& v : parsed["features"]) {
      if (!v.is_number()) {
        res.status = 400;
        res.set_content(
            ErrorBody("malformed_request", "features must be numbers"),
            kJsonContentType);
        return;
      }
      features.push_back(v.get<double>());
    }
    const ServiceSchema schema = service_->schema();
    if (features.size() != schema.input_dim) {
      res.status = 422;
      res.set_content(
          ErrorBody("wrong_arity",
                    absl::StrCat("expected ", schema.input_dim,
                                 " features, got ", features.size())),
          kJsonContentType);
      return;
    }
    absl::StatusOr<FilteredPrediction> prediction =
        service_->Predict(features);
    if (!prediction.ok()) {
      res.status = 500;
      res.set_content(ErrorBody("internal", prediction.status().ToString()),
                      kJsonContentType);
      return;
    }
    predictions_served_.fetch_add(1, std::memory_order_relaxed);
    res.set_content(json{{"probabilities", prediction->probabilities},
                         {"labels", prediction->labels},
                         {"truncation_tie", prediction->truncation_tie}}
                        .dump(),
                    kJsonContentType);
  });

  if (logger_) {
    // Pre-routing, handler and logger run on the same worker thread.
    server_->set_pre_routing_handler(
        [](const httplib::Request&, httplib::Response&) {
          request_start = std::chrono::steady_clock::now();
          return httplib::Server::HandlerResponse::Unhandled;
        });
    server_->set_logger([this](const httplib::Request& req,
                               const httplib::Response& res) {
      RequestLogEntry entry;
      entry.path = req.path;
      entry.status = res.status;
      entry.latency = std::chrono::duration_cast<std::chrono::microseconds>(
          std::chrono::steady_clock::now() - request_start);
      logger_(entry);
    });
  }
}

}  // namespace mia
