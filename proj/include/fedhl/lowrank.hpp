// Copyright 2026 The fedhl-sim Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "fedhl/errors.hpp"
#include "fedhl/matrix.hpp"

namespace fedhl {

/// Thin SVD W = U·diag(sigma)·Vt with p = min(d, k).
struct SvdTriple {
  Matrix u;                   // d x p, orthonormal columns
  std::vector<double> sigma;  // descending, non-negative
  Matrix vt;                  // p x k, orthonormal rows
};

/// Low-rank adapter pair. The adapter contributes (alpha / rank) · B·A.
class LoraFactors {
 public:
  LoraFactors(Matrix b, Matrix a, double alpha) : b_(std::move(b)), a_(std::move(a)), alpha_(alpha) {
    if (b_.cols() == 0 || b_.cols() != a_.rows()) {
      throw ShapeError("LoraFactors: B is " + b_.shape_string() + ", A is " + a_.shape_string());
    }
    if (b_.cols() > std::min(b_.rows(), a_.cols())) {
      throw RankError("LoraFactors: rank " + std::to_string(b_.cols()) + " exceeds min(d, k)");
    }
    if (!(alpha_ > 0.0) || !std::isfinite(alpha_)) {
      throw InvalidArgument("LoraFactors: alpha must be positive");
    }
  }

  /// alpha defaults to the rank, i.e. unit scaling.
  LoraFactors(Matrix b, Matrix a) : LoraFactors(b, a, static_cast<double>(b.cols())) {}

  const Matrix& b() const noexcept { return b_; }
  const Matrix& a() const noexcept { return a_; }
  Matrix& b() noexcept { return b_; }
  Matrix& a() noexcept { return a_; }
  std::size_t rank() const noexcept { return b_.cols(); }
  std::size_t rows() const noexcept { return b_.rows(); }
  std::size_t cols() const noexcept { return a_.cols(); }
  double alpha() const noexcept { return alpha_; }
  double scale() const noexcept { return alpha_ / static_cast<double>(rank()); }

  bool operator==(const LoraFactors&) const = default;

 private:
  Matrix b_;
  Matrix a_;
  double alpha_;
};

struct Truncation {
  LoraFactors factors;
  Matrix approx;         // best rank-r approximation of W
  double trunc_err_sq;   // ‖W − approx‖_F² = Σ_{j>r} σ_j²
};

namespace detail {

inline double dot_cols(const std::vector<double>& cm, std::size_t rows, std::size_t p,
                       std::size_t q) noexcept {
  const double* x = cm.data() + p * rows;
  const double* y = cm.data() + q * rows;
  double s = 0.0;
  for (std::size_t i = 0; i < rows; ++i) s += x[i] * y[i];
  return s;
}

inline void rotate_cols(std::vector<double>& cm, std::size_t rows, std::size_t p,
                        std::size_t q, double c, double s) noexcept {
  double* x = cm.data() + p * rows;
  double* y = cm.data() + q * rows;
  for (std::size_t i = 0; i < rows; ++i) {
    const double xp = x[i];
    const double yq = y[i];
    x[i] = c * xp - s * yq;
    y[i] = s * xp + c * yq;
  }
}

// One-sided Jacobi (Hestenes) on a tall matrix given column-major. On return
// `work` holds U·Σ in its columns and `v` (column-major n x n) the right
// singular vectors.
inline void hestenes_jacobi(std::vector<double>& work, std::size_t m, std::size_t n,
                            std::vector<double>& v, std::size_t max_sweeps) {
  v.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;

  const double tol = static_cast<double>(std::max<std::size_t>(m, 1)) *
                     std::numeric_limits<double>::epsilon();

  for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double alpha = dot_cols(work, m, p, p);
        const double beta = dot_cols(work, m, q, q);
        const double gamma = dot_cols(work, m, p, q);
        if (gamma == 0.0 || std::abs(gamma) <= tol * std::sqrt(alpha) * std::sqrt(beta)) {
          continue;
        }
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::hypot(1.0, zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        rotate_cols(work, m, p, q, c, s);
        rotate_cols(v, n, p, q, c, s);
      }
    }
    if (!rotated) return;
  }
  throw ConvergenceError("svd: one-sided Jacobi did not converge within " +
                             std::to_string(max_sweeps) + " sweeps",
                         max_sweeps);
}

// Fill zero columns of a column-major m x n matrix with unit vectors
// orthogonal to all other columns.
inline void complete_orthonormal(std::vector<double>& u, std::size_t m, std::size_t n,
                                 std::vector<bool>& valid) {
  std::size_t candidate = 0;
  for (std::size_t j = 0; j < n; ++j) {
    if (valid[j]) continue;
    double* col = u.data() + j * m;
    for (; candidate < m; ++candidate) {
      std::fill(col, col + m, 0.0);
      col[candidate] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t o = 0; o < n; ++o) {
          if (!valid[o]) continue;
          const double proj = dot_cols(u, m, j, o);
          const double* other = u.data() + o * m;
          for (std::size_t i = 0; i < m; ++i) col[i] -= proj * other[i];
        }
      }
      const double norm = std::sqrt(dot_cols(u, m, j, j));
      if (norm > 0.5) {
        for (std::size_t i = 0; i < m; ++i) col[i] /= norm;
        valid[j] = true;
        ++candidate;
        break;
      }
    }
    if (!valid[j]) throw Error("svd: failed to complete orthonormal basis");
  }
}

}  // namespace detail

/// Default sweep budget for svd(): 100 sweeps per unit of min(d, k).
inline std::size_t default_svd_sweeps(std::size_t d, std::size_t k) {
  return 100 * std::max<std::size_t>(std::min(d, k), 1);
}

//
// Thin SVD by one-sided Jacobi. Deterministic sign convention: within every
// column of U the entry of largest magnitude (lowest index on ties) is
// non-negative; the matching row of Vt absorbs the flip.
//
inline SvdTriple svd(const Matrix& w, std::optional<std::size_t> max_sweeps = std::nullopt) {
  if (w.empty()) throw ShapeError("svd: empty matrix");
  require_finite(w, "svd");

  const bool wide = w.rows() < w.cols();
  const std::size_t m = wide ? w.cols() : w.rows();
  const std::size_t n = wide ? w.rows() : w.cols();

  // column-major copy of the tall orientation
  std::vector<double> work(m * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < m; ++i) work[j * m + i] = wide ? w(j, i) : w(i, j);

  std::vector<double> v;
  detail::hestenes_jacobi(work, m, n, v,
                          max_sweeps.value_or(default_svd_sweeps(w.rows(), w.cols())));

  std::vector<double> norms(n);
  for (std::size_t j = 0; j < n; ++j) norms[j] = std::sqrt(detail::dot_cols(work, m, j, j));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return norms[a] > norms[b]; });

  std::vector<double> left(m * n);
  std::vector<double> right(n * n);
  std::vector<double> sigma(n);
  std::vector<bool> valid(n, false);
  for (std::size_t jj = 0; jj < n; ++jj) {
    const std::size_t j = order[jj];
    sigma[jj] = norms[j];
    std::copy_n(v.data() + j * n, n, right.data() + jj * n);
    if (norms[j] > std::numeric_limits<double>::min()) {
      for (std::size_t i = 0; i < m; ++i) left[jj * m + i] = work[j * m + i] / norms[j];
      valid[jj] = true;
    } else {
      sigma[jj] = 0.0;
    }
  }
  detail::complete_orthonormal(left, m, n, valid);

  // Sign convention on the user-facing U: `left` when tall, `right` when wide.
  std::vector<double>& u_cols = wide ? right : left;
  std::vector<double>& v_cols = wide ? left : right;
  const std::size_t u_len = wide ? n : m;
  const std::size_t v_len = wide ? m : n;
  for (std::size_t j = 0; j < n; ++j) {
    double* uc = u_cols.data() + j * u_len;
    std::size_t arg = 0;
    for (std::size_t i = 1; i < u_len; ++i)
      if (std::abs(uc[i]) > std::abs(uc[arg])) arg = i;
    if (uc[arg] < 0.0) {
      for (std::size_t i = 0; i < u_len; ++i) uc[i] = -uc[i];
      double* vc = v_cols.data() + j * v_len;
      for (std::size_t i = 0; i < v_len; ++i) vc[i] = -vc[i];
    }
  }

  SvdTriple out{Matrix(w.rows(), n), std::move(sigma), Matrix(n, w.cols())};
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < w.rows(); ++i) out.u(i, j) = u_cols[j * u_len + i];
    for (std::size_t i = 0; i < w.cols(); ++i) out.vt(j, i) = v_cols[j * v_len + i];
  }
  return out;
}

/// Rank-r slice of an existing decomposition, split symmetrically as
/// B = U_r·√Σ_r, A = √Σ_r·Vt_r and then divided by √(alpha/r) so that
/// reconstruct(factors) equals the approximation for any alpha.
inline Truncation truncate_from_svd(const SvdTriple& s, std::size_t r, double alpha) {
  const std::size_t p = s.sigma.size();
  if (r < 1 || r > p) {
    throw RankError("truncate: rank " + std::to_string(r) + " outside [1, " +
                    std::to_string(p) + "]");
  }
  if (!(alpha > 0.0)) throw InvalidArgument("truncate: alpha must be positive");

  const std::size_t d = s.u.rows();
  const std::size_t k = s.vt.cols();
  const double unscale = 1.0 / std::sqrt(alpha / static_cast<double>(r));

  Matrix b(d, r);
  Matrix a(r, k);
  Matrix approx(d, k);
  for (std::size_t j = 0; j < r; ++j) {
    const double root = std::sqrt(s.sigma[j]);
    for (std::size_t i = 0; i < d; ++i) b(i, j) = s.u(i, j) * root * unscale;
    for (std::size_t c = 0; c < k; ++c) a(j, c) = root * s.vt(j, c) * unscale;
    for (std::size_t i = 0; i < d; ++i) {
      const double us = s.u(i, j) * s.sigma[j];
      if (us == 0.0) continue;
      auto row = approx.row(i);
      for (std::size_t c = 0; c < k; ++c) row[c] += us * s.vt(j, c);
    }
  }

  double tail = 0.0;
  for (std::size_t j = p; j-- > r;) tail += s.sigma[j] * s.sigma[j];

  return Truncation{LoraFactors(std::move(b), std::move(a), alpha), std::move(approx), tail};
}

inline Truncation truncate_from_svd(const SvdTriple& s, std::size_t r) {
  return truncate_from_svd(s, r, static_cast<double>(r));
}

/// As truncate_from_svd(s, r, alpha) with s = svd(w), except that a
/// full-rank truncation returns w itself rather than its round-off image.
inline Truncation truncate_from_svd(const Matrix& w, const SvdTriple& s, std::size_t r,
                                    double alpha) {
  Truncation t = truncate_from_svd(s, r, alpha);
  if (r == s.sigma.size()) t.approx = w;
  return t;
}

inline Truncation truncate_to_rank(const Matrix& w, std::size_t r, double alpha) {
  if (r < 1 || r > std::min(w.rows(), w.cols())) {
    throw RankError("truncate_to_rank: rank " + std::to_string(r) + " outside [1, " +
                    std::to_string(std::min(w.rows(), w.cols())) + "] for " +
                    w.shape_string());
  }
  return truncate_from_svd(w, svd(w), r, alpha);
}

inline Truncation truncate_to_rank(const Matrix& w, std::size_t r) {
  return truncate_to_rank(w, r, static_cast<double>(r));
}

/// (alpha / rank) · B·A
inline Matrix reconstruct(const LoraFactors& f) {
  Matrix w = matmul(f.b(), f.a());
  if (f.scale() != 1.0) w *= f.scale();
  return w;
}

}  // namespace fedhl
