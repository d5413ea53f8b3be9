// Copyright 2026 The fedhl-sim Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedhl/errors.hpp"
#include "fedhl/lowrank.hpp"
#include "fedhl/matrix.hpp"

namespace fedhl {

enum class AggregationStrategy { zero_padding, truncated_baseline, joint, fedhl };

enum class WeightKind {
  automatic,  // fedhl_optimal for the fedhl strategy, fedavg otherwise
  fedavg_proportional,
  uniform,
  fedhl_optimal,
};

/// How the recorded truncation error r̂ = ‖W − W^r‖_F² enters the optimal
/// weights: as is, or squared once more.
enum class ErrorPower { squared_norm, fourth_power };

struct WeightPolicy {
  WeightKind kind = WeightKind::automatic;
  double epsilon = 1e-8;
  std::optional<double> softmax_temperature = 1.0;  // nullopt disables smoothing
  ErrorPower error_power = ErrorPower::squared_norm;
  bool sample_weighted = false;  // multiply optimal weights by m_i/m and renormalize

  void validate() const {
    if (!(epsilon > 0.0) || !std::isfinite(epsilon))
      throw InvalidArgument("WeightPolicy: epsilon must be positive");
    if (softmax_temperature && (!(*softmax_temperature > 0.0) || !std::isfinite(*softmax_temperature)))
      throw InvalidArgument("WeightPolicy: softmax temperature must be positive");
  }

  bool operator==(const WeightPolicy&) const = default;
};

inline std::string_view to_string(AggregationStrategy s) {
  switch (s) {
    case AggregationStrategy::zero_padding: return "zero_padding";
    case AggregationStrategy::truncated_baseline: return "truncated_baseline";
    case AggregationStrategy::joint: return "joint";
    case AggregationStrategy::fedhl: return "fedhl";
  }
  return "?";
}

inline std::optional<AggregationStrategy> parse_strategy(std::string_view name) {
  for (auto s : {AggregationStrategy::zero_padding, AggregationStrategy::truncated_baseline,
                 AggregationStrategy::joint, AggregationStrategy::fedhl})
    if (to_string(s) == name) return s;
  return std::nullopt;
}

inline std::string_view to_string(WeightKind k) {
  switch (k) {
    case WeightKind::automatic: return "auto";
    case WeightKind::fedavg_proportional: return "fedavg";
    case WeightKind::uniform: return "uniform";
    case WeightKind::fedhl_optimal: return "fedhl_optimal";
  }
  return "?";
}

inline std::optional<WeightKind> parse_weight_kind(std::string_view name) {
  for (auto k : {WeightKind::automatic, WeightKind::fedavg_proportional, WeightKind::uniform,
                 WeightKind::fedhl_optimal})
    if (to_string(k) == name) return k;
  return std::nullopt;
}

/// Aggregation weights on the probability simplex.
class WeightVector {
 public:
  static constexpr double kSumTolerance = 1e-12;

  WeightVector() = default;

  explicit WeightVector(std::vector<double> p) : p_(std::move(p)) {
    if (p_.empty()) throw InvalidArgument("WeightVector: empty");
    double sum = 0.0;
    for (double v : p_) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidArgument("WeightVector: negative or non-finite weight");
      sum += v;
    }
    if (std::abs(sum - 1.0) > kSumTolerance)
      throw InvalidArgument("WeightVector: weights sum to " + std::to_string(sum));
  }

  std::size_t size() const noexcept { return p_.size(); }
  double operator[](std::size_t i) const noexcept { return p_[i]; }
  std::span<const double> values() const noexcept { return p_; }
  auto begin() const noexcept { return p_.begin(); }
  auto end() const noexcept { return p_.end(); }

  double min() const { return *std::min_element(p_.begin(), p_.end()); }
  double max() const { return *std::max_element(p_.begin(), p_.end()); }

  bool operator==(const WeightVector&) const = default;

 private:
  std::vector<double> p_;
};

namespace detail {

inline WeightVector normalized(std::vector<double> raw) {
  double sum = 0.0;
  for (double v : raw) sum += v;
  for (double& v : raw) v /= sum;
  return WeightVector(std::move(raw));
}

inline void check_lengths(std::size_t a, std::size_t b, const char* op) {
  if (a != b) {
    throw ShapeError(std::string(op) + ": length mismatch (" + std::to_string(a) + " vs " +
                     std::to_string(b) + ")");
  }
  if (a == 0) throw InvalidArgument(std::string(op) + ": no updates");
}

}  // namespace detail

/// p_i = m_i / Σ m_j
inline WeightVector fedavg_weights(std::span<const std::size_t> sample_counts) {
  if (sample_counts.empty()) throw InvalidArgument("fedavg_weights: empty list");
  std::vector<double> raw;
  raw.reserve(sample_counts.size());
  for (auto m : sample_counts) {
    if (m == 0) throw InvalidArgument("fedavg_weights: sample counts must be positive");
    raw.push_back(static_cast<double>(m));
  }
  return detail::normalized(std::move(raw));
}

inline WeightVector uniform_weights(std::size_t n) {
  if (n == 0) throw InvalidArgument("uniform_weights: n must be positive");
  return WeightVector(std::vector<double>(n, 1.0 / static_cast<double>(n)));
}

//
// Minimizer of Σ p_i²(e_i + ε) on the simplex: p_i ∝ 1/(e_i + ε), where e_i
// is the per-client truncation error term.
//
inline WeightVector fedhl_weights(std::span<const double> trunc_err_sq, double epsilon) {
  if (trunc_err_sq.empty()) throw InvalidArgument("fedhl_weights: empty list");
  if (!(epsilon > 0.0) || !std::isfinite(epsilon))
    throw InvalidArgument("fedhl_weights: epsilon must be positive");
  std::vector<double> raw;
  raw.reserve(trunc_err_sq.size());
  for (double e : trunc_err_sq) {
    if (!(e >= 0.0) || !std::isfinite(e))
      throw InvalidArgument("fedhl_weights: truncation errors must be finite and >= 0");
    raw.push_back(1.0 / (e + epsilon));
  }
  return detail::normalized(std::move(raw));
}

/// q_i = exp(p_i/τ) / Σ exp(p_j/τ)
inline WeightVector softmax_smooth(const WeightVector& w, double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    throw InvalidArgument("softmax_smooth: temperature must be positive");
  const double top = w.max();
  std::vector<double> raw;
  raw.reserve(w.size());
  for (double p : w) raw.push_back(std::exp((p - top) / temperature));
  return detail::normalized(std::move(raw));
}

/// Σ p_i·W^i
inline Matrix aggregate_joint(std::span<const Matrix> updates, const WeightVector& w) {
  detail::check_lengths(updates.size(), w.size(), "aggregate_joint");
  Matrix out(updates.front().rows(), updates.front().cols());
  for (std::size_t i = 0; i < updates.size(); ++i) axpy(w[i], updates[i], out);
  return out;
}

/// Σ p_i(W_t^{r_i} + ΔW^i): client deltas added to their own truncated start.
inline Matrix aggregate_truncated_baseline(std::span<const Matrix> global_prev_trunc,
                                           std::span<const Matrix> deltas,
                                           const WeightVector& w) {
  detail::check_lengths(global_prev_trunc.size(), deltas.size(), "aggregate_truncated_baseline");
  detail::check_lengths(deltas.size(), w.size(), "aggregate_truncated_baseline");
  Matrix out(deltas.front().rows(), deltas.front().cols());
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    axpy(w[i], global_prev_trunc[i], out);
    axpy(w[i], deltas[i], out);
  }
  return out;
}

/// W_t + Σ p_i(W_{t+1}^i − W_t^{r_i}); the baseline of every client is the
/// untruncated global model.
inline Matrix aggregate_fedhl(const Matrix& global_prev, std::span<const Matrix> updates,
                              std::span<const Matrix> global_prev_trunc, const WeightVector& w) {
  detail::check_lengths(updates.size(), global_prev_trunc.size(), "aggregate_fedhl");
  detail::check_lengths(updates.size(), w.size(), "aggregate_fedhl");
  Matrix out = global_prev;
  for (std::size_t i = 0; i < updates.size(); ++i) {
    Matrix delta = updates[i] - global_prev_trunc[i];
    axpy(w[i], delta, out);
  }
  return out;
}

namespace detail {

// Weighted mean of the factors after padding to r_max. The adapter scale is
// folded into B so that products stay comparable across ranks.
inline std::pair<Matrix, Matrix> padded_means(std::span<const LoraFactors> factors,
                                              const WeightVector& w, std::size_t r_max) {
  const std::size_t d = factors.front().rows();
  const std::size_t k = factors.front().cols();
  Matrix b_bar(d, r_max);
  Matrix a_bar(r_max, k);
  for (std::size_t i = 0; i < factors.size(); ++i) {
    const auto& f = factors[i];
    if (f.rows() != d || f.cols() != k) throw ShapeError("zero padding: adapters differ in shape");
    if (f.rank() > r_max) {
      throw RankError("zero padding: rank " + std::to_string(f.rank()) + " exceeds r_max " +
                      std::to_string(r_max));
    }
    const double sb = w[i] * f.scale();
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t c = 0; c < f.rank(); ++c) b_bar(r, c) += sb * f.b()(r, c);
    for (std::size_t r = 0; r < f.rank(); ++r)
      for (std::size_t c = 0; c < k; ++c) a_bar(r, c) += w[i] * f.a()(r, c);
  }
  return {std::move(b_bar), std::move(a_bar)};
}

}  // namespace detail

/// B̄·Ā after zero-padding every adapter to r_max.
inline Matrix aggregate_zero_padding(std::span<const LoraFactors> factor_updates,
                                     const WeightVector& w, std::size_t r_max) {
  detail::check_lengths(factor_updates.size(), w.size(), "aggregate_zero_padding");
  auto [b_bar, a_bar] = detail::padded_means(factor_updates, w, r_max);
  return matmul(b_bar, a_bar);
}

/// ‖B̄Ā − Σ p_i·s_i·B^iA^i‖_F, padding to the largest rank present.
inline double cross_term_noise(std::span<const LoraFactors> factor_updates, const WeightVector& w) {
  detail::check_lengths(factor_updates.size(), w.size(), "cross_term_noise");
  std::size_t r_max = 0;
  for (const auto& f : factor_updates) r_max = std::max(r_max, f.rank());
  Matrix mixed = aggregate_zero_padding(factor_updates, w, r_max);
  for (std::size_t i = 0; i < factor_updates.size(); ++i)
    axpy(-w[i], reconstruct(factor_updates[i]), mixed);
  return frob_norm(mixed);
}

}  // namespace fedhl
