// Copyright 2026 The fedhl-sim Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedhl/aggregation.hpp"
#include "fedhl/config.hpp"
#include "fedhl/diagnostics.hpp"
#include "fedhl/orchestrator.hpp"
#include "fedhl/parallel.hpp"

namespace fedhl {

inline constexpr std::string_view kMetricsHeader =
    "round,global_loss,global_grad_norm_sq,trunc_bias_sq,mean_trunc_err_sq,weights_min,"
    "weights_max,wall_time_ms";

inline constexpr std::string_view kDiagnosticsHeader =
    "round,client,rank,trunc_err_sq,gamma_k,gamma_bound_k,shadow_gap_sq,static_trunc_bias_sq";

/// 17 significant digits: enough to round-trip any double.
inline std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_metrics_csv(std::ostream& out, const std::vector<RoundMetrics>& metrics) {
  out << kMetricsHeader << '\n';
  for (const auto& m : metrics) {
    out << m.round << ',' << format_number(m.global_loss) << ','
        << format_number(m.global_grad_norm_sq) << ',' << format_number(m.trunc_bias_sq) << ','
        << format_number(m.mean_trunc_err_sq) << ',' << format_number(m.weights_min) << ','
        << format_number(m.weights_max) << ',' << format_number(m.wall_time_ms) << '\n';
  }
}

struct DiagnosticsRow {
  std::size_t round = 0;
  std::size_t client = 0;
  std::size_t rank = 0;
  double trunc_err_sq = 0.0;
  double gamma_k = 0.0;
  double gamma_bound_k = 0.0;
  std::optional<double> shadow_gap_sq;  // not defined for zero_padding
  double static_trunc_bias_sq = 0.0;
};

inline void write_diagnostics_csv(std::ostream& out, const std::vector<DiagnosticsRow>& rows) {
  out << kDiagnosticsHeader << '\n';
  for (const auto& r : rows) {
    out << r.round << ',' << r.client << ',' << r.rank << ',' << format_number(r.trunc_err_sq)
        << ',' << format_number(r.gamma_k) << ',' << format_number(r.gamma_bound_k) << ','
        << (r.shadow_gap_sq ? format_number(*r.shadow_gap_sq) : std::string("NA")) << ','
        << format_number(r.static_trunc_bias_sq) << '\n';
  }
}

//
// Per-round drift and shadow-gap measurements along the trajectory W_t.
// Factored runs are measured with W-space clients from the same W_t.
//
inline std::vector<DiagnosticsRow> diagnose_round(const Matrix& global, const Problem& problem,
                                                  const ExperimentConfig& cfg,
                                                  std::size_t round) {
  ExperimentConfig wcfg = cfg;
  wcfg.client_mode = ClientMode::w_space;

  std::optional<double> gap;
  double static_bias = 0.0;
  if (cfg.strategy != AggregationStrategy::zero_padding) {
    const BiasReport report = shadow_gap(global, problem, wcfg, round, cfg.strategy);
    gap = report.shadow_gap_sq;
    static_bias = report.static_trunc_bias_sq;
  } else {
    const RoundPlan plan = plan_round(global, problem, cfg, round);
    static_bias = static_trunc_bias_sq(cfg.strategy, global, plan, compute_weights(plan, problem, cfg));
  }

  std::vector<DiagnosticsRow> rows;
  for (std::size_t id : sample_cohort(cfg, round)) {
    const DriftTrace trace = trace_drift(global, problem, wcfg, id, round);
    rows.push_back(DiagnosticsRow{round, id, cfg.ranks[id], trace.trunc_err_sq,
                                  trace.gamma.back(), trace.gamma_bound.back(), gap,
                                  static_bias});
  }
  return rows;
}

struct RunManifest {
  std::filesystem::path config_path;
  std::filesystem::path output_dir;
  std::vector<std::uint64_t> seeds;
  std::vector<AggregationStrategy> strategies;
  bool diagnostics = false;
  std::size_t threads = 1;
  bool record_timing = false;
};

struct RunOutcome {
  AggregationStrategy strategy = AggregationStrategy::fedhl;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  std::size_t rounds = 0;
  double final_global_loss = 0.0;
  double final_global_grad_norm_sq = 0.0;
  double min_global_grad_norm_sq = 0.0;
  std::string metrics_file;
  std::string diagnostics_file;
};

inline std::string run_file_stem(AggregationStrategy s, std::uint64_t seed) {
  return std::string(to_string(s)) + "_seed" + std::to_string(seed);
}

inline RunOutcome execute_run(const ExperimentConfig& base, AggregationStrategy strategy,
                              std::uint64_t seed, const RunManifest& manifest) {
  RunOutcome out;
  out.strategy = strategy;
  out.seed = seed;
  try {
    const ExperimentConfig cfg = base.with_seed(seed).with_strategy(strategy);
    cfg.validate();
    const Problem problem = generate_problem(cfg.problem);

    std::vector<DiagnosticsRow> diag;
    RunOptions opts;
    opts.record_timing = manifest.record_timing;
    if (manifest.diagnostics) {
      opts.on_round_start = [&](const RoundState& state, const Problem& p) {
        auto rows = diagnose_round(state.global, p, cfg, state.round);
        diag.insert(diag.end(), rows.begin(), rows.end());
      };
    }
    const auto metrics = run_experiment(cfg, problem, opts);

    const std::string stem = run_file_stem(strategy, seed);
    out.metrics_file = "metrics_" + stem + ".csv";
    {
      std::ofstream f(manifest.output_dir / out.metrics_file, std::ios::binary);
      if (!f) throw Error("cannot write " + out.metrics_file);
      write_metrics_csv(f, metrics);
    }
    if (manifest.diagnostics) {
      out.diagnostics_file = "diagnostics_" + stem + ".csv";
      std::ofstream f(manifest.output_dir / out.diagnostics_file, std::ios::binary);
      if (!f) throw Error("cannot write " + out.diagnostics_file);
      write_diagnostics_csv(f, diag);
    }

    out.rounds = cfg.rounds;
    out.final_global_loss = metrics.back().global_loss;
    out.final_global_grad_norm_sq = metrics.back().global_grad_norm_sq;
    out.min_global_grad_norm_sq = std::numeric_limits<double>::infinity();
    for (const auto& m : metrics)
      out.min_global_grad_norm_sq = std::min(out.min_global_grad_norm_sq, m.global_grad_norm_sq);
    out.ok = true;
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  return out;
}

/// Summary document: one entry per run plus paired comparisons on final loss
/// for every pair of strategies over the seeds where both runs succeeded.
inline nlohmann::ordered_json summarize_runs(const RunManifest& manifest,
                                             const std::vector<RunOutcome>& outcomes) {
  using ojson = nlohmann::ordered_json;
  ojson runs = ojson::array();
  for (const auto& o : outcomes) {
    ojson r = {{"strategy", to_string(o.strategy)}, {"seed", o.seed},
               {"status", o.ok ? "ok" : "failed"}};
    if (o.ok) {
      r["rounds"] = o.rounds;
      r["final_global_loss"] = o.final_global_loss;
      r["final_global_grad_norm_sq"] = o.final_global_grad_norm_sq;
      r["min_global_grad_norm_sq"] = o.min_global_grad_norm_sq;
      r["metrics_file"] = o.metrics_file;
      if (!o.diagnostics_file.empty()) r["diagnostics_file"] = o.diagnostics_file;
    } else {
      r["error"] = o.error;
    }
    runs.push_back(std::move(r));
  }

  const std::size_t n_seeds = manifest.seeds.size();
  const auto at = [&](std::size_t s, std::size_t k) -> const RunOutcome& {
    return outcomes[s * n_seeds + k];
  };
  ojson comparisons = ojson::array();
  for (std::size_t a = 0; a < manifest.strategies.size(); ++a) {
    for (std::size_t b = a + 1; b < manifest.strategies.size(); ++b) {
      std::size_t wins = 0, ties = 0, losses = 0, paired = 0;
      double diff_sum = 0.0;
      for (std::size_t k = 0; k < n_seeds; ++k) {
        const auto& ra = at(a, k);
        const auto& rb = at(b, k);
        if (!ra.ok || !rb.ok) continue;
        ++paired;
        diff_sum += ra.final_global_loss - rb.final_global_loss;
        if (ra.final_global_loss < rb.final_global_loss) {
          ++wins;
        } else if (ra.final_global_loss == rb.final_global_loss) {
          ++ties;
        } else {
          ++losses;
        }
      }
      comparisons.push_back({
          {"strategy", to_string(manifest.strategies[a])},
          {"versus", to_string(manifest.strategies[b])},
          {"paired_seeds", paired},
          {"wins", wins},
          {"ties", ties},
          {"losses", losses},
          {"mean_final_loss_diff", paired ? diff_sum / static_cast<double>(paired) : 0.0},
      });
    }
  }
  return ojson{{"runs", std::move(runs)}, {"comparisons", std::move(comparisons)}};
}

//
// Executes every (strategy, seed) run of the manifest and writes
//   metrics_<strategy>_seed<seed>.csv, diagnostics_<...>.csv (optional),
//   summary.json
// into the output directory. Returns 0 iff every run completed.
//
inline int run_and_emit(const RunManifest& manifest, std::ostream& log) {
  try {
    if (manifest.seeds.empty()) throw ConfigError("seeds", "at least one seed is required");
    if (manifest.strategies.empty())
      throw ConfigError("strategies", "at least one strategy is required");
    const ExperimentConfig base = load_config_file(manifest.config_path.string());

    std::error_code ec;
    std::filesystem::create_directories(manifest.output_dir, ec);
    if (!std::filesystem::is_directory(manifest.output_dir)) {
      throw Error("output directory '" + manifest.output_dir.string() + "' is not writable");
    }

    const std::size_t n_seeds = manifest.seeds.size();
    std::vector<RunOutcome> outcomes(manifest.strategies.size() * n_seeds);
    parallel_for(outcomes.size(), manifest.threads, [&](std::size_t job) {
      outcomes[job] = execute_run(base, manifest.strategies[job / n_seeds],
                                  manifest.seeds[job % n_seeds], manifest);
    });

    int status = 0;
    for (const auto& o : outcomes) {
      if (!o.ok) {
        log << "run " << to_string(o.strategy) << " seed " << o.seed << " failed: " << o.error
            << '\n';
        status = 1;
      }
    }

    std::ofstream f(manifest.output_dir / "summary.json", std::ios::binary);
    if (!f) throw Error("cannot write summary.json");
    f << summarize_runs(manifest, outcomes).dump(2) << '\n';
    if (!f) throw Error("failed writing summary.json");
    return status;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace fedhl
