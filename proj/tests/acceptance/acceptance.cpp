// Copyright 2026 The fedhl-sim Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails. Tolerances and budgets are pinned below.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "fedhl/diagnostics.hpp"
#include "fedhl/runner.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace fedhl;
using fedhl::testing::random_factors;
using fedhl::testing::random_matrix;

namespace {

constexpr double kEckartYoungRelTol = 1e-9;
constexpr double kFiniteDiffStep = 1e-5;
constexpr double kGradRelTol = 1e-6;
constexpr double kCrossTermTol = 1e-12;
constexpr double kGridResolution = 1e-4;
constexpr double kWeightTol = 1e-3;
constexpr double kBiasIdentityTol = 1e-12;
constexpr double kPersistenceRatio = 0.5;
constexpr double kDriftStdErrs = 3.0;
constexpr double kRateFactor = 1.5;

std::size_t worker_count() { return std::max(1u, std::thread::hardware_concurrency()); }

struct Verdict {
  bool pass = true;
  std::string detail;
};

class Report {
 public:
  void run(int id, const char* name, double budget_s, const std::function<Verdict()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = body();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (budget_s > 0 && secs >= budget_s) {
      v.pass = false;
      v.detail += " [over time budget]";
    }
    std::printf("%s  %2d %-28s %7.2fs  %s\n", v.pass ? "PASS" : "FAIL", id, name, secs,
                v.detail.c_str());
    std::fflush(stdout);
    failures_ += v.pass ? 0 : 1;
  }
  int failures() const { return failures_; }

 private:
  int failures_ = 0;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. Eckart–Young

// σ² of W from a symmetric eigensolver on the Gram matrix, in long double.
std::vector<long double> eigen_sigma_sq(const Matrix& w) {
  using LMat = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
  LMat x(w.rows(), w.cols());
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j) x(i, j) = w(i, j);
  const LMat gram = w.rows() >= w.cols() ? LMat(x.transpose() * x) : LMat(x * x.transpose());
  Eigen::SelfAdjointEigenSolver<LMat> es(gram, Eigen::EigenvaluesOnly);
  std::vector<long double> ev(es.eigenvalues().data(),
                              es.eigenvalues().data() + es.eigenvalues().size());
  std::sort(ev.begin(), ev.end(), std::greater<>());
  for (auto& v : ev) v = std::max<long double>(v, 0.0L);
  return ev;
}

Verdict eckart_young() {
  std::mt19937_64 shapes(2024);
  std::uniform_int_distribution<std::size_t> dim(1, 64);
  std::uniform_real_distribution<double> log_scale(-3.0, 3.0);
  double worst = 0.0;
  std::size_t checks = 0;
  for (std::uint64_t n = 0; n < 200; ++n) {
    const std::size_t d = dim(shapes), k = dim(shapes);
    const Matrix w = random_matrix(d, k, 1000 + n, std::pow(10.0, log_scale(shapes)));
    const auto ev = eigen_sigma_sq(w);
    const SvdTriple s = svd(w);
    for (std::size_t r = 1; r <= std::min(d, k); ++r) {
      long double tail = 0.0L;
      for (std::size_t j = r; j < ev.size(); ++j) tail += ev[j];
      const double got = truncate_from_svd(w, s, r, static_cast<double>(r)).trunc_err_sq;
      ++checks;
      if (tail == 0.0L) {
        if (got != 0.0) return {false, fmt("nonzero error %.3g at full rank", got)};
        continue;
      }
      worst = std::max(worst, static_cast<double>(std::fabs(got - tail) / tail));
    }
  }
  return {worst <= kEckartYoungRelTol,
          fmt("max rel err %.3g over %.0f (matrix, rank) pairs, tol %.0e", worst,
              static_cast<double>(checks), kEckartYoungRelTol)};
}

// ---------------------------------------------------------------------------
// 2. Gradients vs central differences

double rel_err(const Matrix& fd, const Matrix& g) {
  return std::sqrt(frob_dist_sq(fd, g)) / std::max(frob_norm(g), 1e-300);
}

Verdict gradients() {
  const double h = kFiniteDiffStep;
  double worst_w = 0.0, worst_lora = 0.0;
  for (std::uint64_t n = 0; n < 50; ++n) {
    ProblemSpec spec;
    spec.d = 3 + n % 6;
    spec.k = 2 + (n * 7) % 6;
    spec.target_rank = 1 + n % std::min(spec.d, spec.k);
    spec.n_clients = 2;
    spec.samples_per_client = {10 + n % 13, 17};
    spec.hetero_sigma = 0.3;
    spec.master_seed = 500 + n;
    const Problem p = generate_problem(spec);
    const auto& ds = p.datasets[n % 2];

    Matrix w = random_matrix(spec.d, spec.k, 7000 + n);
    const Matrix g = grad_w(w, ds);
    Matrix fd(spec.d, spec.k);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double keep = w.data()[i];
      w.data()[i] = keep + h;
      const double up = loss(w, ds);
      w.data()[i] = keep - h;
      const double down = loss(w, ds);
      w.data()[i] = keep;
      fd.data()[i] = (up - down) / (2 * h);
    }
    worst_w = std::max(worst_w, rel_err(fd, g));

    const std::size_t r = 1 + n % std::min(spec.d, spec.k);
    const Matrix base = random_matrix(spec.d, spec.k, 8000 + n, 0.5);
    const LoraFactors f0 = random_factors(spec.d, spec.k, r, 9000 + n);
    const LoraFactors f(f0.b(), f0.a(), 0.5 * static_cast<double>(r + n % 3));
    const auto objective = [&](const LoraFactors& x) { return loss(base + reconstruct(x), ds); };
    const auto [gb, ga] = lora_grads(f, grad_w(base + reconstruct(f), ds));
    Matrix fd_b(gb.rows(), gb.cols()), fd_a(ga.rows(), ga.cols());
    for (std::size_t i = 0; i < fd_b.size(); ++i) {
      LoraFactors up = f, down = f;
      up.b().data()[i] += h;
      down.b().data()[i] -= h;
      fd_b.data()[i] = (objective(up) - objective(down)) / (2 * h);
    }
    for (std::size_t i = 0; i < fd_a.size(); ++i) {
      LoraFactors up = f, down = f;
      up.a().data()[i] += h;
      down.a().data()[i] -= h;
      fd_a.data()[i] = (objective(up) - objective(down)) / (2 * h);
    }
    worst_lora = std::max({worst_lora, rel_err(fd_b, gb), rel_err(fd_a, ga)});
  }
  return {std::max(worst_w, worst_lora) <= kGradRelTol,
          fmt("max rel err grad_w %.3g, lora_grads %.3g (tol %.0e)", worst_w, worst_lora,
              kGradRelTol)};
}

// ---------------------------------------------------------------------------
// 3. Zero-padding cross terms

Matrix padded_product(const LoraFactors& x, const LoraFactors& y, std::size_t r_max) {
  Matrix b(x.rows(), r_max), a(r_max, y.cols());
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t c = 0; c < x.rank(); ++c) b(i, c) = x.scale() * x.b()(i, c);
  for (std::size_t c = 0; c < y.rank(); ++c)
    for (std::size_t j = 0; j < y.cols(); ++j) a(c, j) = y.a()(c, j);
  Matrix out(x.rows(), y.cols());
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < r_max; ++c) s += b(i, c) * a(c, j);
      out(i, j) = s;
    }
  return out;
}

Verdict cross_terms() {
  double worst = 0.0;
  for (std::uint64_t n = 0; n < 100; ++n) {
    const std::size_t d = 2 + n % 9, k = 2 + (n * 5) % 11;
    const std::size_t cap = std::min(d, k);
    const std::size_t r1 = 1 + n % cap, r2 = 1 + (n * 3 + 1) % cap;
    const std::vector<LoraFactors> f = {random_factors(d, k, r1, 2 * n + 1),
                                        random_factors(d, k, r2, 2 * n + 2)};
    const std::size_t r_max = std::max(r1, r2);
    const Matrix got = aggregate_zero_padding(f, uniform_weights(2), r_max);
    Matrix want = padded_product(f[0], f[0], r_max) + padded_product(f[0], f[1], r_max) +
                  padded_product(f[1], f[0], r_max) + padded_product(f[1], f[1], r_max);
    want *= 0.25;
    worst = std::max(worst, fedhl::testing::max_abs_diff(got, want));
  }
  return {worst <= kCrossTermTol, fmt("max abs err %.3g on 100 pairs (tol %.0e)", worst,
                                      kCrossTermTol)};
}

// ---------------------------------------------------------------------------
// 4. Weight optimality

double weight_objective(const std::vector<double>& p, const std::vector<double>& c) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += p[i] * p[i] * c[i];
  return s;
}

// Minimizer of Σ p_i² c_i over simplex points whose coordinates are multiples
// of the grid step. For N = 3 the inner coordinate is resolved exactly: the
// objective is convex along it, so only the grid neighbours of the line
// minimizer can win.
std::vector<double> grid_minimizer(const std::vector<double>& c) {
  const long steps = std::lround(1.0 / kGridResolution);
  std::vector<double> best;
  double best_val = std::numeric_limits<double>::infinity();
  const auto consider = [&](std::vector<double> p) {
    const double v = weight_objective(p, c);
    if (v < best_val) {
      best_val = v;
      best = std::move(p);
    }
  };
  if (c.size() == 2) {
    for (long i = 0; i <= steps; ++i) {
      const double p0 = static_cast<double>(i) / steps;
      consider({p0, 1.0 - p0});
    }
    return best;
  }
  for (long i = 0; i <= steps; ++i) {
    const long rest = steps - i;
    const double p0 = static_cast<double>(i) / steps;
    const double mass = static_cast<double>(rest) / steps;
    // argmin over p1 of c1 p1² + c2 (mass − p1)²
    const double line = mass * c[2] / (c[1] + c[2]);
    const long j0 = static_cast<long>(std::floor(line * steps));
    for (long j = std::max(0L, j0 - 1); j <= std::min(rest, j0 + 2); ++j) {
      const double p1 = static_cast<double>(j) / steps;
      consider({p0, p1, static_cast<double>(rest - j) / steps});
    }
  }
  return best;
}

Verdict weight_optimality() {
  constexpr double eps = 1e-8;
  std::mt19937_64 gen(77);
  std::uniform_real_distribution<double> log_err(-2.0, 1.0);
  double worst = 0.0;
  for (std::size_t n : {2u, 3u}) {
    for (int v = 0; v < 100; ++v) {
      std::vector<double> e(n), c(n);
      for (std::size_t i = 0; i < n; ++i) {
        e[i] = std::pow(10.0, log_err(gen));
        c[i] = e[i] + eps;
      }
      const WeightVector w = fedhl_weights(e, eps);
      const auto grid = grid_minimizer(c);
      for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, std::abs(w[i] - grid[i]));
    }
  }
  if (worst > kWeightTol) return {false, fmt("max coordinate gap %.3g vs grid", worst)};

  // Invariants for every N up to 100, with deliberate ties and zero errors.
  std::uniform_int_distribution<int> bucket(0, 9);
  for (std::size_t n = 1; n <= 100; ++n) {
    std::vector<double> e(n);
    for (auto& x : e) {
      const int b = bucket(gen);
      x = b == 0 ? 0.0 : (b <= 3 ? static_cast<double>(b) : std::pow(10.0, 3 * log_err(gen)));
    }
    const WeightVector w = fedhl_weights(e, eps);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!(w[i] >= 0.0)) return {false, fmt("negative weight at N=%.0f", double(n))};
      sum += w[i];
      for (std::size_t j = 0; j < n; ++j) {
        if (e[i] < e[j] && !(w[i] >= w[j])) return {false, fmt("order violated at N=%.0f", double(n))};
        if (e[i] == e[j] && w[i] != w[j]) return {false, fmt("tie broken at N=%.0f", double(n))};
      }
    }
    if (std::abs(sum - 1.0) > static_cast<double>(n) * std::numeric_limits<double>::epsilon())
      return {false, fmt("sum %.17g at N=%.0f", sum, double(n))};
  }
  return {true, fmt("max coordinate gap %.3g vs %.0e grid (tol %.0e); invariants ok N<=100", worst,
                    kGridResolution, kWeightTol)};
}

// ---------------------------------------------------------------------------
// 5. FedHL static bias vanishes

std::vector<ExperimentConfig> bias_runs() {
  std::vector<ExperimentConfig> runs;
  for (int v = 0; v < 6; ++v) {
    ExperimentConfig c;
    c.problem.d = 10;
    c.problem.k = 8;
    c.problem.target_rank = 3;
    c.problem.n_clients = 5;
    c.problem.samples_per_client = {30, 40, 50, 60, 70};
    c.problem.hetero_sigma = 0.4;
    c.problem.grad_noise_sigma = v % 2 ? 0.1 : 0.0;
    c.problem.noise_mode = v == 5 ? NoiseMode::minibatch : NoiseMode::additive;
    c.train = {.local_steps = 3, .learning_rate = 0.01, .batch_size = 8};
    c.rounds = 15;
    c.ranks = {8, 6, 4, 2, 1};
    c.participation_rate = v >= 4 ? 0.6 : 1.0;
    c.client_mode = v % 3 == 0 ? ClientMode::w_space : ClientMode::factored;
    c.init_scale = 0.3;
    runs.push_back(c.with_seed(40 + v));
  }
  return runs;
}

Verdict fedhl_bias_vanishes() {
  double worst_identity = 0.0;
  std::size_t rounds = 0;
  for (const auto& cfg : bias_runs()) {
    const ExperimentConfig run = cfg.with_strategy(AggregationStrategy::fedhl);
    const Problem problem = generate_problem(run.problem);
    bool nonzero = false;
    RunOptions opts;
    opts.on_round_start = [&](const RoundState& state, const Problem& p) {
      const RoundPlan plan = plan_round(state.global, p, run, state.round);
      const auto results = train_cohort(plan, p, run);
      const WeightVector w = compute_weights(plan, p, run);
      if (static_trunc_bias_sq(AggregationStrategy::fedhl, state.global, plan, w) != 0.0)
        nonzero = true;
      const Matrix ours = aggregate_round(AggregationStrategy::fedhl, state.global, plan,
                                          results, w, max_rank(run));
      const Matrix base = aggregate_round(AggregationStrategy::truncated_baseline, state.global,
                                          plan, results, w, max_rank(run));
      Matrix bias(state.global.rows(), state.global.cols());
      for (std::size_t j = 0; j < plan.cohort.size(); ++j)
        axpy(w[j], state.global - plan.truncations[j].approx, bias);
      worst_identity =
          std::max(worst_identity, fedhl::testing::max_abs_diff(ours - base, bias));
      ++rounds;
    };
    const auto metrics = run_experiment(run, problem, opts);
    for (const auto& m : metrics) nonzero = nonzero || m.trunc_bias_sq != 0.0;
    if (nonzero) return {false, "nonzero FedHL static bias"};
  }
  return {worst_identity <= kBiasIdentityTol,
          fmt("bias exactly 0 in %.0f rounds; identity max abs err %.3g (tol %.0e)",
              static_cast<double>(rounds), worst_identity, kBiasIdentityTol)};
}

// ---------------------------------------------------------------------------
// 6. Baseline bias persistence

Verdict baseline_bias_persists() {
  ExperimentConfig c;
  c.problem.d = c.problem.k = 16;
  c.problem.target_rank = 8;
  c.problem.n_clients = 4;
  c.problem.samples_per_client.assign(4, 100);
  c.problem.hetero_sigma = 0.5;
  c.problem.grad_noise_sigma = 0.0;
  c.train = {.local_steps = 3, .learning_rate = 0.05};
  c.rounds = 50;
  c.ranks = {16, 8, 4, 4};
  c.client_mode = ClientMode::w_space;  // the convex run
  c.init_scale = 0.01;
  c = c.with_seed(6);

  const auto base = run_experiment(c.with_strategy(AggregationStrategy::truncated_baseline));
  const auto ours = run_experiment(c.with_strategy(AggregationStrategy::fedhl));
  double early = 0.0, late = 0.0, fedhl_max = 0.0;
  for (std::size_t t = 1; t <= 25; ++t) early += base[t].trunc_bias_sq / 25.0;
  for (std::size_t t = 26; t <= 50; ++t) late += base[t].trunc_bias_sq / 25.0;
  for (std::size_t t = 1; t <= 50; ++t) fedhl_max = std::max(fedhl_max, ours[t].trunc_bias_sq);
  const bool ok = late > kPersistenceRatio * early && fedhl_max == 0.0;
  return {ok, fmt("baseline mean 1-25 %.4g, 26-50 %.4g (ratio %.3f, need > 0.5); fedhl max %.3g",
                  early, late, late / early, fedhl_max)};
}

// ---------------------------------------------------------------------------
// 7. Drift bound

Verdict drift_bound_holds() {
  std::size_t checks = 0;
  double tightest = std::numeric_limits<double>::infinity();
  for (double sigma : {0.0, 0.1}) {
    ExperimentConfig c;
    c.problem.d = c.problem.k = 8;
    c.problem.target_rank = 3;
    c.problem.n_clients = 4;
    c.problem.samples_per_client = {40, 60, 80, 100};
    c.problem.hetero_sigma = 0.3;
    c.problem.grad_noise_sigma = sigma;
    c.problem.noise_mode = NoiseMode::additive;
    c.train = {.local_steps = 3, .learning_rate = 0.1};
    c.lr_schedule = LrSchedule::theorem;
    c.rounds = 10;
    c.ranks = {8, 4, 2, 1};
    c.client_mode = ClientMode::w_space;
    c.init_scale = 0.5;
    c = c.with_seed(7);
    const Problem problem = generate_problem(c.problem);

    std::vector<RoundState> states;
    RunOptions opts;
    opts.on_round_start = [&](const RoundState& s, const Problem&) {
      if (s.round % 5 == 0) states.push_back(s);
    };
    run_experiment(c, problem, opts);

    for (const auto& s : states) {
      for (std::size_t id = 0; id < c.ranks.size(); ++id) {
        const DriftEstimate est =
            monte_carlo_drift(s.global, problem, c, id, s.round, 200, worker_count());
        for (std::size_t tau = 0; tau < est.mean_gamma.size(); ++tau) {
          const double limit = est.gamma_bound[tau] + kDriftStdErrs * est.stderr_gamma[tau];
          ++checks;
          if (est.mean_gamma[tau] > limit) {
            return {false, fmt("sigma %.1f round %.0f client %.0f tau %.0f exceeds bound", sigma,
                               double(s.round), double(id), double(tau))};
          }
          if (tau == est.mean_gamma.size() - 1 && est.gamma_bound[tau] > 0)
            tightest = std::min(tightest, limit / std::max(est.mean_gamma[tau], 1e-300));
        }
      }
    }
  }
  return {true, fmt("%.0f (sigma, round, client, tau) checks; min (bound+3SE)/mean Gamma_K %.3g",
                    static_cast<double>(checks), tightest)};
}

// ---------------------------------------------------------------------------
// 8. Comparative convergence

Verdict comparative_convergence() {
  ExperimentConfig c;
  c.problem.d = c.problem.k = 32;
  c.problem.target_rank = 8;
  c.problem.n_clients = 10;
  c.problem.samples_per_client.assign(10, 200);
  c.problem.hetero_sigma = 0.5;
  c.problem.grad_noise_sigma = 0.1;
  c.train = {.local_steps = 3, .learning_rate = 0.005};
  c.rounds = 40;
  c.ranks = {32, 24, 20, 16, 16, 12, 12, 12, 8, 8};
  c.init_scale = 0.01;

  const std::vector<AggregationStrategy> strategies = {AggregationStrategy::fedhl,
                                                       AggregationStrategy::truncated_baseline,
                                                       AggregationStrategy::zero_padding};
  constexpr std::size_t seeds = 10;
  std::vector<double> final_loss(strategies.size() * seeds);
  parallel_for(final_loss.size(), worker_count(), [&](std::size_t job) {
    const ExperimentConfig run =
        c.with_seed(1 + job % seeds).with_strategy(strategies[job / seeds]);
    final_loss[job] = run_experiment(run).back().global_loss;
  });
  int beat_base = 0, beat_zp = 0;
  double mean[3] = {0, 0, 0};
  for (std::size_t k = 0; k < seeds; ++k) {
    beat_base += final_loss[k] <= final_loss[seeds + k];
    beat_zp += final_loss[k] <= final_loss[2 * seeds + k];
    for (int s = 0; s < 3; ++s) mean[s] += final_loss[s * seeds + k] / seeds;
  }
  return {beat_base >= 8 && beat_zp >= 9,
          fmt("fedhl <= baseline %.0f/10 (need 8), <= zero_padding %.0f/10 (need 9)", beat_base,
              beat_zp) +
              fmt("; mean final loss fedhl %.4g baseline %.4g zero_padding %.4g", mean[0], mean[1],
                  mean[2])};
}

// ---------------------------------------------------------------------------
// 9. Rate sanity

Verdict rate_sanity() {
  double weakest = std::numeric_limits<double>::infinity();
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    double min_grad[2];
    int slot = 0;
    for (std::size_t T : {25u, 100u}) {
      ExperimentConfig c;
      c.problem.d = c.problem.k = 16;
      c.problem.target_rank = 4;
      c.problem.n_clients = 4;
      c.problem.samples_per_client.assign(4, 100);
      c.problem.hetero_sigma = 0.5;
      c.problem.grad_noise_sigma = 0.1;
      c.train = {.local_steps = 3, .learning_rate = 1.0};  // ignored by the theorem schedule
      c.lr_schedule = LrSchedule::theorem;
      c.rounds = T;
      c.ranks = {16, 8, 4, 4};
      c.client_mode = ClientMode::w_space;
      c.init_scale = 0.5;
      const auto m = run_experiment(c.with_seed(seed).with_strategy(AggregationStrategy::fedhl));
      double lo = std::numeric_limits<double>::infinity();
      for (const auto& r : m) lo = std::min(lo, r.global_grad_norm_sq);
      min_grad[slot++] = lo;
    }
    weakest = std::min(weakest, min_grad[0] / min_grad[1]);
  }
  return {weakest >= kRateFactor,
          fmt("min_t |grad f|^2 ratio T=25 / T=100, worst of 5 seeds %.3g (need >= %.1f)", weakest,
              kRateFactor)};
}

// ---------------------------------------------------------------------------
// 10. Determinism

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Verdict determinism() {
  const fs::path root = fs::temp_directory_path() / "fedhl_acceptance_determinism";
  fs::remove_all(root);
  std::size_t compared = 0;
  for (const auto& entry : fs::directory_iterator(FEDHL_CONFIG_DIR)) {
    if (entry.path().extension() != ".json") continue;
    const ExperimentConfig cfg = load_config_file(entry.path().string());
    std::vector<fs::path> outs;
    for (const std::size_t threads : {std::size_t{1}, std::size_t{1}, worker_count() + 2}) {
      const fs::path out = root / entry.path().stem() / std::to_string(outs.size());
      const std::string cmd = std::string("\"") + FEDHL_SIM_BINARY + "\" --config \"" +
                              entry.path().string() + "\" --out \"" + out.string() +
                              "\" --seeds 3,11 --diagnostics on --threads " +
                              std::to_string(threads) + " --strategies fedhl,truncated_baseline" +
                              (cfg.client_mode == ClientMode::factored ? ",zero_padding" : "");
      if (std::system(cmd.c_str()) != 0) return {false, "simulator failed: " + cmd};
      outs.push_back(out);
    }
    for (const auto& file : fs::directory_iterator(outs[0])) {
      const std::string ref = slurp(file.path());
      for (std::size_t i = 1; i < outs.size(); ++i) {
        if (slurp(outs[i] / file.path().filename()) != ref) {
          return {false, "differs: " + entry.path().stem().string() + "/" +
                             file.path().filename().string()};
        }
      }
      ++compared;
    }
  }
  fs::remove_all(root);
  return {compared > 0, fmt("%.0f output files byte-identical across 3 runs (threads 1, 1, N)",
                            static_cast<double>(compared))};
}

}  // namespace

int main() {
  Report report;
  report.run(1, "eckart-young", 10, eckart_young);
  report.run(2, "gradients", 10, gradients);
  report.run(3, "zero-padding cross terms", 0, cross_terms);
  report.run(4, "weight optimality", 0, weight_optimality);
  report.run(5, "fedhl static bias", 0, fedhl_bias_vanishes);
  report.run(6, "baseline bias persistence", 30, baseline_bias_persists);
  report.run(7, "drift bound", 60, drift_bound_holds);
  report.run(8, "comparative convergence", 300, comparative_convergence);
  report.run(9, "rate sanity", 120, rate_sanity);
  report.run(10, "determinism", 0, determinism);
  std::printf("%d of 10 criteria failed\n", report.failures());
  return report.failures() == 0 ? 0 : 1;
}
