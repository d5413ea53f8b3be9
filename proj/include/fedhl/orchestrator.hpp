// Copyright 2026 The fedhl-sim Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "fedhl/aggregation.hpp"
#include "fedhl/client.hpp"
#include "fedhl/errors.hpp"
#include "fedhl/lowrank.hpp"
#include "fedhl/matrix.hpp"
#include "fedhl/parallel.hpp"
#include "fedhl/rng.hpp"
#include "fedhl/task.hpp"

namespace fedhl {

enum class ClientMode {
  factored,  // SGD on (B, A)
  w_space,   // SGD on W started from the truncated model
};

enum class LrSchedule {
  constant,  // η
  theorem,   // η_t = 1 / (L·K·√T) with the measured L
};

struct ExperimentConfig {
  ProblemSpec problem;
  LocalTrainConfig train;
  LrSchedule lr_schedule = LrSchedule::constant;
  double lr_decay = 1.0;  // multiplicative per round
  std::size_t rounds = 1;
  std::vector<std::size_t> ranks;
  AggregationStrategy strategy = AggregationStrategy::fedhl;
  WeightPolicy weight_policy;
  double participation_rate = 1.0;
  double init_scale = 0.01;
  ClientMode client_mode = ClientMode::factored;
  std::optional<double> lora_alpha;  // unset: alpha = rank
  std::uint64_t master_seed = 0;

  /// Throws ConfigError naming the first offending field.
  void validate() const {
    const auto fail = [](const char* field, const std::string& msg) {
      throw ConfigError(field, msg);
    };
    if (problem.d == 0) fail("problem.d", "must be positive");
    if (problem.k == 0) fail("problem.k", "must be positive");
    if (problem.n_clients == 0) fail("problem.n_clients", "must be positive");
    if (problem.target_rank < 1 || problem.target_rank > std::min(problem.d, problem.k))
      fail("problem.target_rank", "must lie in [1, min(d, k)]");
    if (problem.samples_per_client.size() != problem.n_clients)
      fail("problem.samples_per_client", "needs one entry per client");
    for (auto m : problem.samples_per_client)
      if (m == 0) fail("problem.samples_per_client", "entries must be positive");
    if (!(problem.hetero_sigma >= 0.0) || !std::isfinite(problem.hetero_sigma))
      fail("problem.hetero_sigma", "must be finite and >= 0");
    if (!(problem.grad_noise_sigma >= 0.0) || !std::isfinite(problem.grad_noise_sigma))
      fail("problem.grad_noise_sigma", "must be finite and >= 0");
    if (problem.master_seed != master_seed) fail("seed", "problem seed out of sync");
    if (!(train.learning_rate > 0.0) || !std::isfinite(train.learning_rate))
      fail("train.learning_rate", "must be positive");
    if (train.batch_size < 1) fail("train.batch_size", "must be >= 1");
    if (lr_schedule == LrSchedule::theorem && train.local_steps == 0)
      fail("train.lr_schedule", "theorem schedule needs local_steps >= 1");
    if (!(lr_decay > 0.0) || !std::isfinite(lr_decay)) fail("train.lr_decay", "must be positive");
    if (rounds < 1) fail("rounds", "must be >= 1");
    if (ranks.size() != problem.n_clients)
      fail("ranks", "has " + std::to_string(ranks.size()) + " entries, expected n_clients = " +
                        std::to_string(problem.n_clients));
    for (auto r : ranks)
      if (r < 1 || r > std::min(problem.d, problem.k))
        fail("ranks", "entries must lie in [1, min(d, k)]");
    if (!(weight_policy.epsilon > 0.0) || !std::isfinite(weight_policy.epsilon))
      fail("weight_policy.epsilon", "must be positive");
    if (weight_policy.softmax_temperature &&
        (!(*weight_policy.softmax_temperature > 0.0) ||
         !std::isfinite(*weight_policy.softmax_temperature)))
      fail("weight_policy.softmax_temperature", "must be positive");
    if (!(participation_rate > 0.0) || participation_rate > 1.0)
      fail("participation_rate", "must lie in (0, 1]");
    if (!(init_scale >= 0.0) || !std::isfinite(init_scale))
      fail("init_scale", "must be finite and >= 0");
    if (init_scale == 0.0 && client_mode == ClientMode::factored)
      fail("init_scale", "zero initialization leaves factored clients with dead adapters");
    if (strategy == AggregationStrategy::zero_padding && client_mode == ClientMode::w_space)
      fail("client_mode", "zero_padding aggregates factors and needs factored clients");
    if (lora_alpha && (!(*lora_alpha > 0.0) || !std::isfinite(*lora_alpha)))
      fail("lora_alpha", "must be positive");
  }

  ExperimentConfig with_seed(std::uint64_t seed) const {
    ExperimentConfig c = *this;
    c.master_seed = seed;
    c.problem.master_seed = seed;
    return c;
  }

  ExperimentConfig with_strategy(AggregationStrategy s) const {
    ExperimentConfig c = *this;
    c.strategy = s;
    return c;
  }

  bool operator==(const ExperimentConfig&) const = default;
};

inline WeightKind effective_weight_kind(const ExperimentConfig& cfg) {
  if (cfg.weight_policy.kind != WeightKind::automatic) return cfg.weight_policy.kind;
  return cfg.strategy == AggregationStrategy::fedhl ? WeightKind::fedhl_optimal
                                                    : WeightKind::fedavg_proportional;
}

inline double learning_rate_for_round(const ExperimentConfig& cfg, const Problem& problem,
                                      std::size_t round) {
  double base = cfg.train.learning_rate;
  if (cfg.lr_schedule == LrSchedule::theorem) {
    base = 1.0 / (problem.smoothness_L * static_cast<double>(cfg.train.local_steps) *
                  std::sqrt(static_cast<double>(cfg.rounds)));
  }
  return base * std::pow(cfg.lr_decay, static_cast<double>(round));
}

/// W_0 with i.i.d. N(0, init_scale²) entries.
inline Matrix init_global(const ExperimentConfig& cfg) {
  if (cfg.init_scale == 0.0 && cfg.client_mode == ClientMode::factored) {
    throw InvalidArgument("init_global: init_scale = 0 is not allowed for factored clients");
  }
  if (!(cfg.init_scale >= 0.0)) throw InvalidArgument("init_global: init_scale must be >= 0");
  Engine eng = make_engine(cfg.master_seed, StreamPurpose::init);
  return normal_matrix(cfg.problem.d, cfg.problem.k, eng, cfg.init_scale);
}

/// ⌈rate·N⌉ clients drawn uniformly without replacement, sorted by id.
inline std::vector<std::size_t> sample_cohort(const ExperimentConfig& cfg, std::size_t round) {
  const std::size_t n = cfg.problem.n_clients;
  std::vector<std::size_t> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  const auto want = static_cast<std::size_t>(
      std::ceil(cfg.participation_rate * static_cast<double>(n) - 1e-9));
  const std::size_t size = std::clamp<std::size_t>(want, 1, n);
  if (size == n) return ids;
  Engine eng = make_engine(cfg.master_seed, StreamPurpose::cohort, {.round = round});
  std::shuffle(ids.begin(), ids.end(), eng);
  ids.resize(size);
  std::sort(ids.begin(), ids.end());
  return ids;
}

/// Server-side preparation of one round: cohort, one SVD, per-client truncations.
struct RoundPlan {
  std::size_t round = 0;
  double learning_rate = 0.0;
  std::vector<std::size_t> cohort;
  std::vector<Truncation> truncations;  // aligned with cohort

  std::vector<double> trunc_err_sq() const {
    std::vector<double> e;
    e.reserve(truncations.size());
    for (const auto& t : truncations) e.push_back(t.trunc_err_sq);
    return e;
  }
};

inline RoundPlan plan_round(const Matrix& global, const Problem& problem,
                            const ExperimentConfig& cfg, std::size_t round) {
  RoundPlan plan;
  plan.round = round;
  plan.learning_rate = learning_rate_for_round(cfg, problem, round);
  plan.cohort = sample_cohort(cfg, round);
  const SvdTriple decomposition = svd(global);
  plan.truncations.reserve(plan.cohort.size());
  for (std::size_t id : plan.cohort) {
    const std::size_t r = cfg.ranks[id];
    plan.truncations.push_back(
        truncate_from_svd(global, decomposition, r, cfg.lora_alpha.value_or(static_cast<double>(r))));
  }
  return plan;
}

struct ClientResult {
  std::size_t client = 0;
  Matrix update;                       // W_{t+1}^i
  std::optional<LoraFactors> factors;  // factored mode only
};

inline LocalTrainConfig train_config_for(const ExperimentConfig& cfg, const RoundPlan& plan) {
  LocalTrainConfig t = cfg.train;
  t.learning_rate = plan.learning_rate;
  return t;
}

/// Local training for every cohort member; `threads` only affects speed.
inline std::vector<ClientResult> train_cohort(const RoundPlan& plan, const Problem& problem,
                                              const ExperimentConfig& cfg,
                                              std::size_t threads = 1) {
  const LocalTrainConfig train = train_config_for(cfg, plan);
  std::vector<ClientResult> results(plan.cohort.size());
  parallel_for(plan.cohort.size(), threads, [&](std::size_t j) {
    const std::size_t id = plan.cohort[j];
    const RngStreamKey key{.round = plan.round, .client = id};
    const auto& ds = problem.datasets[id];
    ClientResult& out = results[j];
    out.client = id;
    if (cfg.client_mode == ClientMode::factored) {
      ClientUpdate upd = local_train(plan.truncations[j].factors, ds, train, problem.spec, key);
      out.update = std::move(upd.reconstructed);
      out.factors = std::move(upd.factors_after);
    } else {
      out.update = shadow_train(plan.truncations[j].approx, ds, train, problem.spec, key);
    }
  });
  return results;
}

/// Aggregation weights over the cohort, per the configured policy.
inline WeightVector compute_weights(const RoundPlan& plan, const Problem& problem,
                                    const ExperimentConfig& cfg) {
  const auto& policy = cfg.weight_policy;
  switch (effective_weight_kind(cfg)) {
    case WeightKind::uniform:
      return uniform_weights(plan.cohort.size());
    case WeightKind::fedhl_optimal: {
      std::vector<double> errs = plan.trunc_err_sq();
      if (policy.error_power == ErrorPower::fourth_power)
        for (double& e : errs) e *= e;
      WeightVector w = fedhl_weights(errs, policy.epsilon);
      if (policy.sample_weighted) {
        std::vector<double> raw;
        for (std::size_t j = 0; j < plan.cohort.size(); ++j)
          raw.push_back(w[j] * static_cast<double>(problem.datasets[plan.cohort[j]].samples()));
        w = detail::normalized(std::move(raw));
      }
      if (policy.softmax_temperature) w = softmax_smooth(w, *policy.softmax_temperature);
      return w;
    }
    case WeightKind::fedavg_proportional:
    case WeightKind::automatic:
      break;
  }
  std::vector<std::size_t> counts;
  for (std::size_t id : plan.cohort) counts.push_back(problem.datasets[id].samples());
  return fedavg_weights(counts);
}

inline Matrix aggregate_round(AggregationStrategy strategy, const Matrix& global,
                              const RoundPlan& plan, const std::vector<ClientResult>& results,
                              const WeightVector& weights, std::size_t r_max) {
  std::vector<Matrix> updates;
  std::vector<Matrix> truncated;
  updates.reserve(results.size());
  truncated.reserve(results.size());
  for (std::size_t j = 0; j < results.size(); ++j) {
    updates.push_back(results[j].update);
    truncated.push_back(plan.truncations[j].approx);
  }
  switch (strategy) {
    case AggregationStrategy::joint:
      return aggregate_joint(updates, weights);
    case AggregationStrategy::truncated_baseline: {
      std::vector<Matrix> deltas;
      deltas.reserve(updates.size());
      for (std::size_t j = 0; j < updates.size(); ++j) deltas.push_back(updates[j] - truncated[j]);
      return aggregate_truncated_baseline(truncated, deltas, weights);
    }
    case AggregationStrategy::fedhl:
      return aggregate_fedhl(global, updates, truncated, weights);
    case AggregationStrategy::zero_padding: {
      std::vector<LoraFactors> factors;
      factors.reserve(results.size());
      for (const auto& r : results) {
        if (!r.factors) throw InvalidArgument("zero_padding needs factored client updates");
        factors.push_back(*r.factors);
      }
      return aggregate_zero_padding(factors, weights, r_max);
    }
  }
  throw InvalidArgument("unknown aggregation strategy");
}

//
// ‖Σ p_i(b_i − W_t)‖_F² where b_i is the baseline the strategy adds client
// deltas to: W_t^{r_i} for the truncated-baseline family, W_t for FedHL (the
// difference is then exactly zero).
//
inline double static_trunc_bias_sq(AggregationStrategy strategy, const Matrix& global,
                                   const RoundPlan& plan, const WeightVector& weights) {
  Matrix bias(global.rows(), global.cols());
  for (std::size_t j = 0; j < plan.truncations.size(); ++j) {
    const Matrix& baseline =
        strategy == AggregationStrategy::fedhl ? global : plan.truncations[j].approx;
    axpy(weights[j], baseline - global, bias);
  }
  return frob_norm_sq(bias);
}

struct RoundState {
  std::size_t round = 0;
  Matrix global;                     // W_t
  std::vector<double> trunc_err_sq;  // r̂_i(t-1) of the cohort that produced W_t
  WeightVector weights_used;
  std::vector<std::size_t> participating;
};

struct RoundMetrics {
  std::size_t round = 0;
  double global_loss = 0.0;
  double global_grad_norm_sq = 0.0;
  std::vector<double> client_losses;
  double trunc_bias_sq = 0.0;
  double mean_trunc_err_sq = 0.0;
  std::vector<double> weights;
  double weights_min = 0.0;
  double weights_max = 0.0;
  double wall_time_ms = 0.0;
};

struct RunOptions {
  std::size_t threads = 1;
  bool record_timing = false;
  /// Called with W_t before round t executes.
  std::function<void(const RoundState&, const Problem&)> on_round_start;
};

/// Loss and gradient of the full population objective; aggregation fields zero.
inline RoundMetrics evaluate_round(const Matrix& global, const Problem& problem,
                                   std::size_t round) {
  RoundMetrics m;
  m.round = round;
  m.global_loss = global_loss(global, problem);
  m.global_grad_norm_sq = frob_norm_sq(global_grad(global, problem));
  m.client_losses.reserve(problem.datasets.size());
  for (const auto& ds : problem.datasets) m.client_losses.push_back(loss(global, ds));
  return m;
}

inline std::size_t max_rank(const ExperimentConfig& cfg) {
  return *std::max_element(cfg.ranks.begin(), cfg.ranks.end());
}

/// One pass of the round loop: truncate, train, weight, aggregate, evaluate.
inline std::pair<RoundState, RoundMetrics> run_round(const RoundState& state,
                                                     const Problem& problem,
                                                     const ExperimentConfig& cfg,
                                                     const RunOptions& opts = {}) {
  const auto start = std::chrono::steady_clock::now();
  const RoundPlan plan = plan_round(state.global, problem, cfg, state.round);
  const std::vector<ClientResult> results = train_cohort(plan, problem, cfg, opts.threads);
  const WeightVector weights = compute_weights(plan, problem, cfg);

  Matrix next = aggregate_round(cfg.strategy, state.global, plan, results, weights, max_rank(cfg));
  if (!all_finite(next)) {
    throw NonFiniteError("aggregation at round " + std::to_string(state.round) +
                         " produced a non-finite global model");
  }

  RoundState out;
  out.round = state.round + 1;
  out.trunc_err_sq = plan.trunc_err_sq();
  out.weights_used = weights;
  out.participating = plan.cohort;

  RoundMetrics m = evaluate_round(next, problem, out.round);
  m.trunc_bias_sq = static_trunc_bias_sq(cfg.strategy, state.global, plan, weights);
  m.mean_trunc_err_sq = std::accumulate(out.trunc_err_sq.begin(), out.trunc_err_sq.end(), 0.0) /
                        static_cast<double>(out.trunc_err_sq.size());
  m.weights.assign(weights.begin(), weights.end());
  m.weights_min = weights.min();
  m.weights_max = weights.max();
  if (opts.record_timing) {
    m.wall_time_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                               start).count();
  }
  out.global = std::move(next);
  return {std::move(out), std::move(m)};
}

/// T rounds; returns T + 1 metric records, the first taken at W_0.
inline std::vector<RoundMetrics> run_experiment(const ExperimentConfig& cfg, const Problem& problem,
                                                const RunOptions& opts = {}) {
  cfg.validate();
  RoundState state;
  state.global = init_global(cfg);
  std::vector<RoundMetrics> metrics;
  metrics.reserve(cfg.rounds + 1);
  metrics.push_back(evaluate_round(state.global, problem, 0));
  for (std::size_t t = 0; t < cfg.rounds; ++t) {
    if (opts.on_round_start) opts.on_round_start(state, problem);
    auto [next, m] = run_round(state, problem, cfg, opts);
    state = std::move(next);
    metrics.push_back(std::move(m));
  }
  return metrics;
}

inline std::vector<RoundMetrics> run_experiment(const ExperimentConfig& cfg,
                                                const RunOptions& opts = {}) {
  cfg.validate();
  return run_experiment(cfg, generate_problem(cfg.problem), opts);
}

}  // namespace fedhl
