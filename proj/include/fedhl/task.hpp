// Copyright 2026 The fedhl-sim Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "fedhl/errors.hpp"
#include "fedhl/lowrank.hpp"
#include "fedhl/matrix.hpp"
#include "fedhl/rng.hpp"

namespace fedhl {

// Synthetic federated task: client i solves the least-squares problem
//   f_i(W) = 1/(2 m_i) ‖X_i W − Y_i‖_F²,   Y_i = X_i W*_i,
// with W*_i = W* + hetero_sigma · E_i / √(dk) and W* of rank R.

enum class NoiseMode { minibatch, additive };

struct ProblemSpec {
  std::size_t d = 0;
  std::size_t k = 0;
  std::size_t target_rank = 1;
  std::size_t n_clients = 1;
  std::vector<std::size_t> samples_per_client;
  double hetero_sigma = 0.0;
  double grad_noise_sigma = 0.0;
  NoiseMode noise_mode = NoiseMode::additive;
  bool shared_design = false;  // every client draws X from one common stream
  std::uint64_t master_seed = 0;

  void validate() const {
    if (d == 0 || k == 0) throw InvalidArgument("ProblemSpec: d and k must be positive");
    if (target_rank < 1 || target_rank > std::min(d, k)) {
      throw InvalidArgument("ProblemSpec: target_rank must lie in [1, min(d, k)]");
    }
    if (n_clients < 1) throw InvalidArgument("ProblemSpec: n_clients must be >= 1");
    if (samples_per_client.size() != n_clients) {
      throw InvalidArgument("ProblemSpec: samples_per_client must have n_clients entries");
    }
    for (auto m : samples_per_client)
      if (m < 1) throw InvalidArgument("ProblemSpec: every sample count must be >= 1");
    if (!(hetero_sigma >= 0.0) || !std::isfinite(hetero_sigma))
      throw InvalidArgument("ProblemSpec: hetero_sigma must be finite and >= 0");
    if (!(grad_noise_sigma >= 0.0) || !std::isfinite(grad_noise_sigma))
      throw InvalidArgument("ProblemSpec: grad_noise_sigma must be finite and >= 0");
  }

  bool operator==(const ProblemSpec&) const = default;
};

struct ClientDataset {
  Matrix x;  // m_i x d
  Matrix y;  // m_i x k

  std::size_t samples() const noexcept { return x.rows(); }
};

struct Problem {
  ProblemSpec spec;
  std::vector<ClientDataset> datasets;
  Matrix w_star;
  std::vector<Matrix> w_star_i;
  double smoothness_L = 0.0;

  std::size_t total_samples() const {
    std::size_t m = 0;
    for (const auto& ds : datasets) m += ds.samples();
    return m;
  }

  /// m_i / m for every client.
  std::vector<double> population_weights() const {
    const double m = static_cast<double>(total_samples());
    std::vector<double> p;
    p.reserve(datasets.size());
    for (const auto& ds : datasets) p.push_back(static_cast<double>(ds.samples()) / m);
    return p;
  }
};

namespace detail {

inline void check_task_shapes(const Matrix& w, const ClientDataset& ds, const char* op) {
  if (ds.samples() == 0) throw InvalidArgument(std::string(op) + ": empty dataset");
  if (w.rows() != ds.x.cols() || w.cols() != ds.y.cols()) {
    throw ShapeError(std::string(op) + ": W is " + w.shape_string() + ", X is " +
                     ds.x.shape_string() + ", Y is " + ds.y.shape_string());
  }
}

}  // namespace detail

/// Largest eigenvalue of XᵀX / m, via the top singular value of X.
inline double curvature(const Matrix& x) {
  const double top = svd(x).sigma.front();
  return top * top / static_cast<double>(x.rows());
}

inline Problem generate_problem(const ProblemSpec& spec) {
  spec.validate();
  const std::size_t d = spec.d;
  const std::size_t k = spec.k;
  const std::size_t rank = spec.target_rank;

  Problem out;
  out.spec = spec;

  {
    Engine eng = make_engine(spec.master_seed, StreamPurpose::problem, {.client = 0, .step = 0});
    Matrix left = normal_matrix(d, rank, eng);
    Matrix right = normal_matrix(rank, k, eng);
    out.w_star = matmul(left, right) * (1.0 / std::sqrt(static_cast<double>(rank)));
  }

  Matrix shared_x;
  if (spec.shared_design) {
    const std::size_t rows =
        *std::max_element(spec.samples_per_client.begin(), spec.samples_per_client.end());
    Engine eng = make_engine(spec.master_seed, StreamPurpose::problem, {.client = 0, .step = 2});
    shared_x = normal_matrix(rows, d, eng);
  }

  const double perturb = spec.hetero_sigma / std::sqrt(static_cast<double>(d * k));
  out.datasets.reserve(spec.n_clients);
  out.w_star_i.reserve(spec.n_clients);
  for (std::size_t i = 0; i < spec.n_clients; ++i) {
    const std::size_t m = spec.samples_per_client[i];

    Matrix target = out.w_star;
    if (spec.hetero_sigma > 0.0) {
      Engine eng = make_engine(spec.master_seed, StreamPurpose::problem, {.client = i + 1, .step = 0});
      axpy(perturb, normal_matrix(d, k, eng), target);
    }

    Matrix x;
    if (spec.shared_design) {
      x = Matrix(m, d);
      for (std::size_t r = 0; r < m; ++r) std::ranges::copy(shared_x.row(r), x.row(r).begin());
    } else {
      Engine eng = make_engine(spec.master_seed, StreamPurpose::problem, {.client = i + 1, .step = 1});
      x = normal_matrix(m, d, eng);
    }
    Matrix y = matmul(x, target);

    out.smoothness_L = std::max(out.smoothness_L, curvature(x));
    out.datasets.push_back(ClientDataset{std::move(x), std::move(y)});
    out.w_star_i.push_back(std::move(target));
  }
  return out;
}

/// f_i(W) = 1/(2 m_i) ‖X_i W − Y_i‖_F²
inline double loss(const Matrix& w, const ClientDataset& ds) {
  detail::check_task_shapes(w, ds, "loss");
  Matrix resid = matmul(ds.x, w);
  resid -= ds.y;
  return frob_norm_sq(resid) / (2.0 * static_cast<double>(ds.samples()));
}

/// ∇f_i(W) = (1/m_i) X_iᵀ(X_i W − Y_i)
inline Matrix grad_w(const Matrix& w, const ClientDataset& ds) {
  detail::check_task_shapes(w, ds, "grad_w");
  Matrix resid = matmul(ds.x, w);
  resid -= ds.y;
  Matrix g = matmul_tn(ds.x, resid);
  g *= 1.0 / static_cast<double>(ds.samples());
  return g;
}

//
// One realization of gradient noise. Drawn from the key alone, never from W,
// so two trajectories consuming the same key see the same perturbation.
//
struct GradientDraw {
  NoiseMode mode = NoiseMode::additive;
  std::vector<std::size_t> batch;  // minibatch mode: sampled row indices
  Matrix additive;                 // additive mode: σ·G/√(dk), empty when σ = 0

  bool operator==(const GradientDraw&) const = default;
};

inline GradientDraw draw_gradient_noise(const ClientDataset& ds, const ProblemSpec& spec,
                                        const RngStreamKey& key, std::size_t batch_size = 1,
                                        StreamPurpose purpose = StreamPurpose::gradient) {
  if (ds.samples() == 0) throw InvalidArgument("stochastic gradient: empty dataset");
  GradientDraw draw;
  draw.mode = spec.noise_mode;
  Engine eng = make_engine(spec.master_seed, purpose, key);
  if (spec.noise_mode == NoiseMode::minibatch) {
    if (batch_size < 1) throw InvalidArgument("stochastic gradient: batch_size must be >= 1");
    std::uniform_int_distribution<std::size_t> pick(0, ds.samples() - 1);
    draw.batch.resize(batch_size);
    for (auto& idx : draw.batch) idx = pick(eng);
  } else if (spec.grad_noise_sigma > 0.0) {
    const double scale =
        spec.grad_noise_sigma / std::sqrt(static_cast<double>(ds.x.cols() * ds.y.cols()));
    draw.additive = normal_matrix(ds.x.cols(), ds.y.cols(), eng, scale);
  }
  return draw;
}

/// Stochastic gradient for a given noise realization.
inline Matrix stoch_grad_w(const Matrix& w, const ClientDataset& ds, const GradientDraw& draw) {
  if (draw.mode == NoiseMode::additive) {
    Matrix g = grad_w(w, ds);
    if (!draw.additive.empty()) g += draw.additive;
    return g;
  }
  detail::check_task_shapes(w, ds, "stoch_grad_w");
  if (draw.batch.empty()) throw InvalidArgument("stoch_grad_w: empty minibatch");
  const std::size_t d = ds.x.cols();
  const std::size_t k = ds.y.cols();
  Matrix g(d, k);
  std::vector<double> resid(k);
  for (std::size_t idx : draw.batch) {
    auto xr = ds.x.row(idx);
    auto yr = ds.y.row(idx);
    for (std::size_t c = 0; c < k; ++c) {
      double s = -yr[c];
      for (std::size_t p = 0; p < d; ++p) s += xr[p] * w(p, c);
      resid[c] = s;
    }
    for (std::size_t p = 0; p < d; ++p) {
      auto grow = g.row(p);
      for (std::size_t c = 0; c < k; ++c) grow[c] += xr[p] * resid[c];
    }
  }
  g *= 1.0 / static_cast<double>(draw.batch.size());
  return g;
}

/// Unbiased estimator of ∇f_i(W) keyed by (master_seed, key).
inline Matrix stoch_grad_w(const Matrix& w, const ClientDataset& ds, const ProblemSpec& spec,
                           const RngStreamKey& key, std::size_t batch_size = 1) {
  return stoch_grad_w(w, ds, draw_gradient_noise(ds, spec, key, batch_size));
}

/// Chain rule through W = s·B·A: G_B = s·G_w·Aᵀ, G_A = s·Bᵀ·G_w.
inline std::pair<Matrix, Matrix> lora_grads(const LoraFactors& f, const Matrix& g_w) {
  if (g_w.rows() != f.rows() || g_w.cols() != f.cols()) {
    throw ShapeError("lora_grads: gradient is " + g_w.shape_string() + ", adapter is " +
                     std::to_string(f.rows()) + "x" + std::to_string(f.cols()));
  }
  Matrix g_b = matmul_nt(g_w, f.a());
  Matrix g_a = matmul_tn(f.b(), g_w);
  const double s = f.scale();
  if (s != 1.0) {
    g_b *= s;
    g_a *= s;
  }
  return {std::move(g_b), std::move(g_a)};
}

/// f(W) = Σ (m_i/m) f_i(W)
inline double global_loss(const Matrix& w, const Problem& problem) {
  const auto p = problem.population_weights();
  double total = 0.0;
  for (std::size_t i = 0; i < problem.datasets.size(); ++i)
    total += p[i] * loss(w, problem.datasets[i]);
  return total;
}

inline Matrix global_grad(const Matrix& w, const Problem& problem) {
  const auto p = problem.population_weights();
  Matrix g(w.rows(), w.cols());
  for (std::size_t i = 0; i < problem.datasets.size(); ++i)
    axpy(p[i], grad_w(w, problem.datasets[i]), g);
  return g;
}

}  // namespace fedhl
