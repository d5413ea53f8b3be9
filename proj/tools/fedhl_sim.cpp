// Copyright 2026 The fedhl-sim Authors.
// SPDX-License-Identifier: Apache-2.0

// Batch runner: one metrics CSV per (strategy, seed), optional diagnostics
// CSVs, and a summary JSON with paired comparisons.

#include <cstdint>
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedhl/config.hpp"
#include "fedhl/runner.hpp"

namespace {

std::size_t threads_from_env() {
  const char* env = std::getenv("FEDLORA_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(env, &pos);
    if (pos != std::string(env).size() || v == 0) throw std::invalid_argument(env);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw fedhl::ConfigError("FEDLORA_THREADS", "must be a positive integer, got '" +
                                                    std::string(env) + "'");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated heterogeneous-rank LoRA simulator"};

  std::string config_path;
  std::string out_dir;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> strategies{"fedhl"};
  std::string diagnostics = "off";
  std::string timing = "off";
  std::size_t threads = 0;
  bool dump_config = false;

  app.add_option("--config", config_path, "experiment config (JSON)")->required()
      ->check(CLI::ExistingFile);
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--seeds", seeds, "comma-separated master seeds")->delimiter(',');
  app.add_option("--strategies", strategies,
                 "comma-separated: fedhl, truncated_baseline, zero_padding, joint")
      ->delimiter(',');
  app.add_option("--diagnostics", diagnostics, "emit diagnostics CSVs")
      ->check(CLI::IsMember({"on", "off"}));
  app.add_option("--timing", timing, "record wall_time_ms (breaks byte-identity)")
      ->check(CLI::IsMember({"on", "off"}));
  app.add_option("--threads", threads, "worker threads (fallback: FEDLORA_THREADS)")
      ->check(CLI::PositiveNumber);
  app.add_flag("--dump-config", dump_config, "print the parsed config with defaults and exit");

  CLI11_PARSE(app, argc, argv);

  try {
    if (dump_config) {
      std::cout << fedhl::serialize_config(fedhl::load_config_file(config_path));
      return 0;
    }
    if (out_dir.empty()) throw fedhl::ConfigError("out", "--out is required");

    fedhl::RunManifest manifest;
    manifest.config_path = config_path;
    manifest.output_dir = out_dir;
    if (seeds.empty()) seeds.push_back(fedhl::load_config_file(config_path).master_seed);
    manifest.seeds = seeds;
    for (const auto& name : strategies) {
      const auto s = fedhl::parse_strategy(name);
      if (!s) throw fedhl::ConfigError("strategies", "unknown strategy '" + name + "'");
      manifest.strategies.push_back(*s);
    }
    manifest.diagnostics = diagnostics == "on";
    manifest.record_timing = timing == "on";
    manifest.threads = threads > 0 ? threads : threads_from_env();
    return fedhl::run_and_emit(manifest, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
