// Copyright 2026 The fedhl-sim Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "fedhl/aggregation.hpp"
#include "fedhl/client.hpp"
#include "fedhl/errors.hpp"
#include "fedhl/lowrank.hpp"
#include "fedhl/matrix.hpp"
#include "fedhl/orchestrator.hpp"
#include "fedhl/parallel.hpp"
#include "fedhl/task.hpp"

namespace fedhl {

// Measured counterparts of the quantities in the convergence analysis. All
// of them compare W-space SGD runs that share noise keys, so they need
// client_mode = w_space.

/// D_0 = 4(1 + L²η²)
inline double drift_growth(double smoothness_L, double lr) {
  return 4.0 * (1.0 + smoothness_L * smoothness_L * lr * lr);
}

/// D_0^τ·r̂ + 8η²σ_l²·(D_0^τ − 1)/(D_0 − 1)
inline double drift_bound(double d0, std::size_t tau, double trunc_err_sq, double lr,
                          double sigma_l) {
  const double grow = std::pow(d0, static_cast<double>(tau));
  return grow * trunc_err_sq + 8.0 * lr * lr * sigma_l * sigma_l * (grow - 1.0) / (d0 - 1.0);
}

struct DriftTrace {
  std::size_t client_id = 0;
  std::size_t round = 0;
  double trunc_err_sq = 0.0;       // ‖W_t − W_t^{r_i}‖_F², measured directly
  std::vector<double> gamma;       // Γ_τ, τ = 0..K
  std::vector<double> gamma_bound;
  double d0 = 0.0;
};

namespace detail {

inline void require_w_space(const ExperimentConfig& cfg, const char* op) {
  if (cfg.client_mode != ClientMode::w_space) {
    throw InvalidArgument(std::string(op) + ": requires client_mode = w_space");
  }
}

}  // namespace detail

//
// Runs K coupled W-space SGD steps from W_t and from its rank-r_i truncation
// and records Γ_τ = ‖W_{t,τ} − W_{t,τ}^{r_i}‖_F² with the analytic bound.
// `replica` selects an independent noise realization; replica 0 reproduces
// the noise of the round loop.
//
inline DriftTrace trace_drift(const Matrix& global, const Problem& problem,
                              const ExperimentConfig& cfg, std::size_t client_id,
                              std::size_t round, std::size_t replica = 0) {
  detail::require_w_space(cfg, "trace_drift");
  if (client_id >= problem.datasets.size()) throw InvalidArgument("trace_drift: client out of range");
  const std::size_t r = cfg.ranks.at(client_id);
  const Truncation trunc =
      truncate_to_rank(global, r, cfg.lora_alpha.value_or(static_cast<double>(r)));
  const double lr = learning_rate_for_round(cfg, problem, round);
  const auto& ds = problem.datasets[client_id];
  const RngStreamKey key{.round = round, .client = client_id, .replica = replica};

  DriftTrace out;
  out.client_id = client_id;
  out.round = round;
  out.d0 = drift_growth(problem.smoothness_L, lr);
  out.trunc_err_sq = frob_dist_sq(global, trunc.approx);

  Matrix full = global;
  Matrix low = trunc.approx;
  out.gamma.push_back(out.trunc_err_sq);
  for (std::size_t tau = 0; tau < cfg.train.local_steps; ++tau) {
    const GradientDraw draw = draw_gradient_noise(ds, problem.spec, key.with_step(tau),
                                                  cfg.train.batch_size);
    w_space_step(full, ds, draw, lr);
    w_space_step(low, ds, draw, lr);
    if (!all_finite(full) || !all_finite(low)) throw DivergenceError(round, client_id, tau);
    out.gamma.push_back(frob_dist_sq(full, low));
  }
  for (std::size_t tau = 0; tau <= cfg.train.local_steps; ++tau) {
    out.gamma_bound.push_back(
        drift_bound(out.d0, tau, out.trunc_err_sq, lr, problem.spec.grad_noise_sigma));
  }
  return out;
}

struct DriftEstimate {
  std::vector<double> mean_gamma;
  std::vector<double> stderr_gamma;
  std::vector<double> gamma_bound;
  double trunc_err_sq = 0.0;
  double d0 = 0.0;
  std::size_t replicas = 0;
};

/// Monte-Carlo average of Γ_τ over independent noise replicas.
inline DriftEstimate monte_carlo_drift(const Matrix& global, const Problem& problem,
                                       const ExperimentConfig& cfg, std::size_t client_id,
                                       std::size_t round, std::size_t replicas,
                                       std::size_t threads = 1) {
  if (replicas < 2) throw InvalidArgument("monte_carlo_drift: need at least 2 replicas");
  std::vector<DriftTrace> traces(replicas);
  parallel_for(replicas, threads, [&](std::size_t rep) {
    traces[rep] = trace_drift(global, problem, cfg, client_id, round, rep);
  });

  const std::size_t steps = traces.front().gamma.size();
  DriftEstimate est;
  est.replicas = replicas;
  est.trunc_err_sq = traces.front().trunc_err_sq;
  est.d0 = traces.front().d0;
  est.gamma_bound = traces.front().gamma_bound;
  for (std::size_t tau = 0; tau < steps; ++tau) {
    // Shifted by the first replica so that identical draws give an exact mean.
    const double shift = traces.front().gamma[tau];
    double sum = 0.0;
    for (const auto& t : traces) sum += t.gamma[tau] - shift;
    const double mean = shift + sum / static_cast<double>(replicas);
    double ss = 0.0;
    for (const auto& t : traces) ss += (t.gamma[tau] - mean) * (t.gamma[tau] - mean);
    const double var = ss / static_cast<double>(replicas - 1);
    est.mean_gamma.push_back(mean);
    est.stderr_gamma.push_back(std::sqrt(var / static_cast<double>(replicas)));
  }
  return est;
}

struct BiasReport {
  std::size_t round = 0;
  AggregationStrategy strategy = AggregationStrategy::fedhl;
  double shadow_gap_sq = 0.0;         // ‖W_{t+1} − V_{t+1}‖_F²
  double static_trunc_bias_sq = 0.0;  // ‖Σ p_i(baseline_i − W_t)‖_F²
  std::optional<double> cross_noise;  // only when factors exist
};

//
// Compares the strategy's W_{t+1} against the untruncated reference
//   V_{t+1} = Σ p_i(W_t − η Σ_τ g̃(W_{t,τ}^i)),
// where the reference clients start from W_t instead of W_t^{r_i} and consume
// the same noise keys.
//
inline BiasReport shadow_gap(const Matrix& global, const Problem& problem,
                             const ExperimentConfig& cfg, std::size_t round,
                             AggregationStrategy strategy) {
  detail::require_w_space(cfg, "shadow_gap");
  if (strategy == AggregationStrategy::zero_padding) {
    throw InvalidArgument("shadow_gap: zero_padding has no W-space counterpart");
  }
  const ExperimentConfig run = cfg.with_strategy(strategy);
  const RoundPlan plan = plan_round(global, problem, run, round);
  const auto results = train_cohort(plan, problem, run);
  const WeightVector weights = compute_weights(plan, problem, run);
  const Matrix actual = aggregate_round(strategy, global, plan, results, weights, max_rank(run));

  const LocalTrainConfig train = train_config_for(run, plan);
  std::vector<Matrix> reference;
  reference.reserve(plan.cohort.size());
  for (std::size_t id : plan.cohort) {
    reference.push_back(shadow_train(global, problem.datasets[id], train, problem.spec,
                                     {.round = round, .client = id}));
  }
  const Matrix v_next = aggregate_joint(reference, weights);

  BiasReport out;
  out.round = round;
  out.strategy = strategy;
  out.shadow_gap_sq = frob_dist_sq(actual, v_next);
  out.static_trunc_bias_sq = static_trunc_bias_sq(strategy, global, plan, weights);
  return out;
}

struct SigmaEstimate {
  double sigma_l_sq = 0.0;         // max over probes/clients of E‖g̃ − ∇f_i‖²
  double sigma_l_sq_stderr = 0.0;  // standard error at the maximizing pair
  double sigma_g_sq = 0.0;         // max over probes/clients of ‖∇f − ∇f_i‖²
};

inline SigmaEstimate estimate_sigmas(const Problem& problem, std::span<const Matrix> probes,
                                     std::size_t draws, std::size_t batch_size = 1) {
  if (draws < 100) throw InvalidArgument("estimate_sigmas: draws must be >= 100");
  if (probes.empty()) throw InvalidArgument("estimate_sigmas: no probe points");
  SigmaEstimate est;
  for (std::size_t p = 0; p < probes.size(); ++p) {
    const Matrix& w = probes[p];
    const Matrix global = global_grad(w, problem);
    for (std::size_t i = 0; i < problem.datasets.size(); ++i) {
      const auto& ds = problem.datasets[i];
      const Matrix exact = grad_w(w, ds);
      est.sigma_g_sq = std::max(est.sigma_g_sq, frob_dist_sq(global, exact));

      double sum = 0.0;
      double sum_sq = 0.0;
      for (std::size_t r = 0; r < draws; ++r) {
        const RngStreamKey key{.round = p, .client = i, .replica = r};
        const GradientDraw draw =
            draw_gradient_noise(ds, problem.spec, key, batch_size, StreamPurpose::diagnostics);
        const double dev = frob_dist_sq(stoch_grad_w(w, ds, draw), exact);
        sum += dev;
        sum_sq += dev * dev;
      }
      const double n = static_cast<double>(draws);
      const double mean = sum / n;
      const double var = std::max(0.0, (sum_sq - n * mean * mean) / (n - 1.0));
      if (mean > est.sigma_l_sq || (p == 0 && i == 0)) {
        est.sigma_l_sq = mean;
        est.sigma_l_sq_stderr = std::sqrt(var / n);
      }
    }
  }
  return est;
}

}  // namespace fedhl
