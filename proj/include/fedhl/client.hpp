// Copyright 2026 The fedhl-sim Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <utility>

#include "fedhl/errors.hpp"
#include "fedhl/lowrank.hpp"
#include "fedhl/matrix.hpp"
#include "fedhl/rng.hpp"
#include "fedhl/task.hpp"

namespace fedhl {

struct LocalTrainConfig {
  std::size_t local_steps = 3;  // K; zero is allowed
  double learning_rate = 0.05;
  std::size_t batch_size = 1;

  void validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
      throw InvalidArgument("LocalTrainConfig: learning_rate must be positive");
    if (batch_size < 1) throw InvalidArgument("LocalTrainConfig: batch_size must be >= 1");
  }

  bool operator==(const LocalTrainConfig&) const = default;
};

/// Seen once per local step, before the update is applied.
struct StepRecord {
  std::size_t step;
  const Matrix& iterate;  // W-space iterate the gradient is evaluated at
  const GradientDraw& draw;
};

using StepObserver = std::function<void(const StepRecord&)>;

struct ClientUpdate {
  std::size_t client_id;
  LoraFactors factors_after;
  Matrix reconstructed;
  std::size_t steps_taken;
};

namespace detail {

inline void check_lr(double lr) {
  // η = 0 is a legal no-op for a single call; negative or non-finite is not.
  if (!(lr >= 0.0) || !std::isfinite(lr))
    throw InvalidArgument("local training: learning rate must be finite and >= 0");
}

}  // namespace detail

/// One W-space SGD step: W ← W − η·g̃(W).
inline void w_space_step(Matrix& w, const ClientDataset& ds, const GradientDraw& draw, double lr) {
  axpy(-lr, stoch_grad_w(w, ds, draw), w);
}

//
// K steps of SGD on the adapter pair. Both factor gradients are taken at the
// pre-update pair (simultaneous update). Step τ draws its noise from
// key.with_step(τ).
//
inline ClientUpdate local_train(const LoraFactors& factors, const ClientDataset& ds,
                                const LocalTrainConfig& cfg, const ProblemSpec& spec,
                                const RngStreamKey& key, const StepObserver& observer = {}) {
  detail::check_lr(cfg.learning_rate);
  LoraFactors cur = factors;
  for (std::size_t tau = 0; tau < cfg.local_steps; ++tau) {
    const Matrix w = reconstruct(cur);
    const GradientDraw draw = draw_gradient_noise(ds, spec, key.with_step(tau), cfg.batch_size);
    if (observer) observer(StepRecord{tau, w, draw});
    const Matrix g_w = stoch_grad_w(w, ds, draw);
    auto [g_b, g_a] = lora_grads(cur, g_w);
    axpy(-cfg.learning_rate, g_b, cur.b());
    axpy(-cfg.learning_rate, g_a, cur.a());
    if (!all_finite(cur.b()) || !all_finite(cur.a())) {
      throw DivergenceError(key.round, key.client, tau);
    }
  }
  Matrix rec = reconstruct(cur);
  return ClientUpdate{static_cast<std::size_t>(key.client), std::move(cur), std::move(rec),
                      cfg.local_steps};
}

/// Full-matrix K-step SGD on the same noise keys as local_train.
inline Matrix shadow_train(const Matrix& w0, const ClientDataset& ds, const LocalTrainConfig& cfg,
                           const ProblemSpec& spec, const RngStreamKey& key,
                           const StepObserver& observer = {}) {
  detail::check_lr(cfg.learning_rate);
  Matrix w = w0;
  for (std::size_t tau = 0; tau < cfg.local_steps; ++tau) {
    const GradientDraw draw = draw_gradient_noise(ds, spec, key.with_step(tau), cfg.batch_size);
    if (observer) observer(StepRecord{tau, w, draw});
    w_space_step(w, ds, draw, cfg.learning_rate);
    if (!all_finite(w)) throw DivergenceError(key.round, key.client, tau);
  }
  return w;
}

}  // namespace fedhl
