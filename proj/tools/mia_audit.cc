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

// mia_audit: runs membership-inference audits from a flat config file.

#include <signal.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>

#include "CLI11.hpp"
#include "absl/strings/str_cat.h"
#include "absl/strings/str_format.h"
#include "json.hpp"
#include "mia/audit.h"
#include "mia/blackbox.h"

namespace {

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> workers;
  std::optional<std::string> remote;
  bool quiet = false;
};

void AddCommonFlags(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path, "Run config file")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed", flags.seed, "Override the config seed");
  cmd->add_option("--out", flags.out, "Run directory");
  cmd->add_option("--workers", flags.workers, "Worker threads")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--remote", flags.remote,
                  "Attack a served target at this URL");
  cmd->add_flag("-q,--quiet", flags.quiet, "Only print errors");
}

absl::StatusOr<mia::RunConfig> ResolveConfig(const CommonFlags& flags) {
  absl::StatusOr<mia::RunConfig> config = mia::LoadRunConfig(flags.config_path);
  if (config.ok() && flags.seed) {
    config = mia::OverrideConfig(*config, "seed", std::to_string(*flags.seed));
  }
  if (config.ok() && flags.out) {
    config = mia::OverrideConfig(*config, "out", *flags.out);
  }
  if (config.ok() && flags.workers) {
    config = mia::OverrideConfig(*config, "workers",
                                 std::to_string(*flags.workers));
  }
  if (config.ok() && flags.remote) {
    config = mia::OverrideConfig(*config, "remote", *flags.remote);
  }
  return config;
}

std::function<void(std::string_view)> Logger(bool quiet) {
  if (quiet) return nullptr;
  return [](std::string_view message) { std::cerr << message << "\n"; };
}

int Report(const mia::AuditResult& result) {
  if (!result.status.ok()) {
    std::cerr << "error: " << result.status << "\n";
    return result.failed_stage ? mia::StageExitCode(*result.failed_stage) : 1;
  }
  return 0;
}

int RunStages(const CommonFlags& flags, mia::Stage last,
              mia::AuditOptions options = {}) {
  absl::StatusOr<mia::RunConfig> config = ResolveConfig(flags);
  if (!config.ok()) {
    std::cerr << "error: " << config.status() << "\n";
    return mia::StageExitCode(mia::Stage::kConfig);
  }
  options.stop_after = last;
  options.log = Logger(flags.quiet);
  const mia::AuditResult result = mia::RunAudit(*config, options);
  const int code = Report(result);
  if (code == 0 && !flags.quiet && result.evaluation) {
    const mia::ConfusionCounts& o = result.evaluation->overall;
    std::cout << absl::StrFormat(
        "target train %.4f test %.4f | attack accuracy %s precision %s "
        "recall %s\n",
        result.target_train_accuracy, result.target_test_accuracy,
        mia::FormatRate(o.accuracy()), mia::FormatRate(o.precision()),
        mia::FormatRate(o.recall()));
  }
  if (code == 0) std::cout << config->out_dir << "/manifest.json\n";
  return code;
}

int Evaluate(const CommonFlags& flags, const std::string& target_path,
             const std::string& attack_dir) {
  absl::StatusOr<mia::RunConfig> config = ResolveConfig(flags);
  if (!config.ok()) {
    std::cerr << "error: " << config.status() << "\n";
    return mia::StageExitCode(mia::Stage::kConfig);
  }
  const std::filesystem::path root(config->out_dir);
  mia::AuditOptions options;
  if (config->remote_url.empty()) {
    absl::StatusOr<mia::TrainedModel> target = mia::LoadModel(
        target_path.empty() ? (root / "models" / "target.bin").string()
                            : target_path);
    if (!target.ok()) {
      std::cerr << "error: " << target.status() << "\n";
      return mia::StageExitCode(mia::Stage::kTarget);
    }
    options.preloaded_target = *std::move(target);
  }
  const int classes = config->recluster_classes > 0
                          ? config->recluster_classes
                          : config->schema.class_count;
  absl::StatusOr<mia::AttackModelSet> attack = mia::LoadAttackModels(
      attack_dir.empty() ? (root / "models" / "attack").string() : attack_dir,
      classes);
  if (!attack.ok()) {
    std::cerr << "error: " << attack.status() << "\n";
    return mia::StageExitCode(mia::Stage::kAttack);
  }
  options.attack_models_override = &*attack;
  return RunStages(flags, mia::Stage::kReport, std::move(options));
}

int Serve(const CommonFlags& flags, const std::string& model_path,
          const std::string& bind) {
  absl::StatusOr<mia::RunConfig> config = ResolveConfig(flags);
  if (!config.ok()) {
    std::cerr << "error: " << config.status() << "\n";
    return mia::StageExitCode(mia::Stage::kConfig);
  }
  const std::filesystem::path root(config->out_dir);
  const std::string path =
      model_path.empty() ? (root / "models" / "target.bin").string()
                         : model_path;
  absl::StatusOr<mia::TrainedModel> model = mia::LoadModel(path);
  if (!model.ok()) {
    std::cerr << "error: " << model.status() << "\n";
    return mia::StageExitCode(mia::Stage::kTarget);
  }
  std::string host = "127.0.0.1";
  int port = 8080;
  if (const auto colon = bind.rfind(':'); colon != std::string::npos) {
    host = bind.substr(0, colon);
    port = std::atoi(bind.c_str() + colon + 1);
  } else if (!bind.empty()) {
    port = std::atoi(bind.c_str());
  }

  // Block termination signals before any server thread exists so only the
  // main thread receives them.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  const bool quiet = flags.quiet;
  absl::StatusOr<std::unique_ptr<mia::PredictionServer>> server =
      mia::PredictionServer::Start(
          *model, config->mitigation, host, port,
          [quiet](const mia::RequestLogEntry& entry) {
            if (quiet) return;
            std::cerr << absl::StrFormat("%s %d %dus\n", entry.path,
                                         entry.status, entry.latency.count());
          });
  if (!server.ok()) {
    std::cerr << "error: " << server.status() << "\n";
    return mia::StageExitCode(mia::Stage::kTarget);
  }
  std::cout << (*server)->url() << std::endl;

  int received = 0;
  sigwait(&signals, &received);
  (*server)->Stop();

  const std::uint64_t served = (*server)->predictions_served();
  std::error_code ec;
  std::filesystem::create_directories(root, ec);
  nlohmann::json manifest = {
      {"config_hash", absl::StrFormat("%016x", mia::ConfigHash(*config))},
      {"toolkit_version", mia::kToolkitVersion},
      {"model", path},
      {"mitigation", config->mitigation.ToString()},
      {"url", (*server)->url()},
      {"ledger", {{"predictions_served", served}, {"total", served}}},
  };
  std::ofstream out(root / "serve_manifest.json");
  out << manifest.dump(2) << "\n";
  std::cerr << "served " << served << " predictions\n";
  return out ? 0 : 1;
}

int Sweep(const CommonFlags& flags) {
  absl::StatusOr<mia::RunConfig> config = ResolveConfig(flags);
  if (!config.ok()) {
    std::cerr << "error: " << config.status() << "\n";
    return mia::StageExitCode(mia::Stage::kConfig);
  }
  const mia::SweepReport report =
      mia::RunMitigationSweep(*config, Logger(flags.quiet));
  if (!report.status.ok()) {
    std::cerr << "error: " << report.status << "\n";
    return mia::StageExitCode(mia::Stage::kReport);
  }
  int failed = 0;
  for (const mia::SweepRow& row : report.rows) {
    std::cout << absl::StrFormat(
        "%-14s lambda=%-8g test %.4f | attack accuracy %s precision %s "
        "recall %s%s\n",
        row.filter.ToString(), row.l2_lambda, row.target_test_accuracy,
        mia::FormatRate(row.attack_accuracy),
        mia::FormatRate(row.attack_precision),
        mia::FormatRate(row.attack_recall),
        row.status.ok() ? "" : absl::StrCat("  FAILED: ", row.status.ToString()));
    failed += !row.status.ok();
  }
  std::cout << config->out_dir << "/metrics/sweep.csv\n";
  return failed ? mia::StageExitCode(mia::Stage::kReport) : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Black-box membership inference audits"};
  app.set_version_flag("--version", std::string(mia::kToolkitVersion));
  app.require_subcommand(1);

  CommonFlags flags;
  std::string model_path, attack_dir, bind = "127.0.0.1:8080";

  struct Staged {
    const char* name;
    const char* help;
    mia::Stage last;
  };
  const Staged staged[] = {
      {"gen-data", "Build the corpus and split", mia::Stage::kData},
      {"train-target", "Train the target model", mia::Stage::kTarget},
      {"synthesize", "Generate shadow training data", mia::Stage::kShadowData},
      {"train-shadows", "Train shadow models", mia::Stage::kShadows},
      {"train-attack", "Train per-class attack models", mia::Stage::kAttack},
      {"audit", "Run the full pipeline", mia::Stage::kReport},
  };
  std::vector<std::pair<CLI::App*, mia::Stage>> staged_cmds;
  for (const Staged& s : staged) {
    CLI::App* cmd = app.add_subcommand(s.name, s.help);
    AddCommonFlags(cmd, flags);
    staged_cmds.emplace_back(cmd, s.last);
  }

  CLI::App* evaluate =
      app.add_subcommand("evaluate", "Score a target with saved attack models");
  AddCommonFlags(evaluate, flags);
  evaluate->add_option("--model", model_path, "Target model file");
  evaluate->add_option("--attack-dir", attack_dir, "Attack model directory");

  CLI::App* serve =
      app.add_subcommand("serve-target", "Serve a trained target over HTTP");
  AddCommonFlags(serve, flags);
  serve->add_option("--model", model_path, "Target model file");
  serve->add_option("--bind", bind, "host:port to listen on")
      ->capture_default_str();

  CLI::App* sweep =
      app.add_subcommand("sweep", "Grid of mitigation filters and L2 values");
  AddCommonFlags(sweep, flags);

  CLI11_PARSE(app, argc, argv);

  for (const auto& [cmd, last] : staged_cmds) {
    if (cmd->parsed()) return RunStages(flags, last);
  }
  if (evaluate->parsed()) return Evaluate(flags, model_path, attack_dir);
  if (serve->parsed()) return Serve(flags, model_path, bind);
  if (sweep->parsed()) return Sweep(flags);
  return 1;
}
