#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "ocvkit/errors.hpp"

namespace ocvkit {

// Dense row-major matrix, just large enough for the design systems here
// (thousands of rows, a handful of columns).
class Matrix {
public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), a_(rows * cols, 0.0) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }

  double& operator()(std::size_t i, std::size_t j) { return a_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return a_[i * cols_ + j]; }

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> a_;
};

struct LeastSquaresSolution {
  std::vector<double> x;
  double residual_rms = 0.0;              // sqrt(SSR / rows)
  double condition = 0.0;                 // |R11| / |Rkk| from the pivoted factor
  std::vector<double> covariance_scale;   // diag of (A^T A)^{-1}
};

// Linear least squares min ||Ax - b|| via column-pivoted Householder QR.
// Never forms the normal equations. Throws NumericError on rank deficiency
// or, when condition_limit > 0, on a condition estimate above the limit.
inline LeastSquaresSolution solve_least_squares(const Matrix& a, const std::vector<double>& b,
                                                double condition_limit = 0.0) {
  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  if (n == 0 || m < n) {
    throw NumericError("least squares needs rows >= cols, got " + std::to_string(m) + "x" +
                       std::to_string(n));
  }
  if (b.size() != m) {
    throw NumericError("least squares rhs length mismatch");
  }

  Matrix w = a;
  std::vector<double> qtb = b;
  std::vector<std::size_t> perm(n);
  std::vector<double> rdiag(n, 0.0);
  std::vector<double> tau(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) perm[j] = j;

  for (std::size_t k = 0; k < n; ++k) {
    // Pivot: bring the remaining column with the largest tail norm to k.
    std::size_t best = k;
    double best_norm2 = -1.0;
    for (std::size_t j = k; j < n; ++j) {
      double s = 0.0;
      for (std::size_t i = k; i < m; ++i) s += w(i, j) * w(i, j);
      if (s > best_norm2) {
        best_norm2 = s;
        best = j;
      }
    }
    if (best != k) {
      for (std::size_t i = 0; i < m; ++i) std::swap(w(i, k), w(i, best));
      std::swap(perm[k], perm[best]);
    }

    double sigma = std::sqrt(best_norm2 < 0.0 ? 0.0 : best_norm2);
    if (!(sigma > 0.0) || !std::isfinite(sigma)) {
      throw NumericError("rank-deficient design matrix at column " + std::to_string(k));
    }
    double x0 = w(k, k);
    double beta = x0 >= 0.0 ? -sigma : sigma;
    // Householder vector v = x - beta*e1, stored below the diagonal.
    w(k, k) = x0 - beta;
    double vtv = 0.0;
    for (std::size_t i = k; i < m; ++i) vtv += w(i, k) * w(i, k);
    tau[k] = vtv > 0.0 ? 2.0 / vtv : 0.0;
    rdiag[k] = beta;

    for (std::size_t j = k + 1; j < n; ++j) {
      double dot = 0.0;
      for (std::size_t i = k; i < m; ++i) dot += w(i, k) * w(i, j);
      double f = tau[k] * dot;
      for (std::size_t i = k; i < m; ++i) w(i, j) -= f * w(i, k);
    }
    double dotb = 0.0;
    for (std::size_t i = k; i < m; ++i) dotb += w(i, k) * qtb[i];
    double fb = tau[k] * dotb;
    for (std::size_t i = k; i < m; ++i) qtb[i] -= fb * w(i, k);
  }

  const double rmax = std::fabs(rdiag[0]);
  const double rmin = std::fabs(rdiag[n - 1]);
  const double eps = std::numeric_limits<double>::epsilon();
  if (rmin <= rmax * eps * static_cast<double>(std::max(m, n))) {
    throw NumericError("rank-deficient design matrix (|R| diagonal collapse)");
  }
  LeastSquaresSolution out;
  out.condition = rmax / rmin;
  if (condition_limit > 0.0 && out.condition > condition_limit) {
    throw NumericError("design matrix condition estimate " + std::to_string(out.condition) +
                       " exceeds limit " + std::to_string(condition_limit));
  }

  // R lives in the strict upper triangle of w, its diagonal in rdiag.
  auto upper = [&](std::size_t i, std::size_t j) { return i == j ? rdiag[i] : w(i, j); };

  // Back-substitution on the pivoted system, then undo the permutation.
  std::vector<double> y(n, 0.0);
  for (std::size_t kk = n; kk-- > 0;) {
    double s = qtb[kk];
    for (std::size_t j = kk + 1; j < n; ++j) s -= upper(kk, j) * y[j];
    y[kk] = s / rdiag[kk];
  }
  out.x.assign(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) out.x[perm[j]] = y[j];

  double ssr = 0.0;
  for (std::size_t i = n; i < m; ++i) ssr += qtb[i] * qtb[i];
  out.residual_rms = std::sqrt(ssr / static_cast<double>(m));

  // (A^T A)^{-1} diagonal from R^{-1}: diag_j = ||row j of R^{-1}||^2.
  Matrix rinv(n, n);
  for (std::size_t col = 0; col < n; ++col) {
    for (std::size_t kk = n; kk-- > 0;) {
      double s = (kk == col) ? 1.0 : 0.0;
      for (std::size_t j = kk + 1; j < n; ++j) s -= upper(kk, j) * rinv(j, col);
      rinv(kk, col) = s / rdiag[kk];
    }
  }
  out.covariance_scale.assign(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t kk = 0; kk < n; ++kk) s += rinv(j, kk) * rinv(j, kk);
    out.covariance_scale[perm[j]] = s;
  }
  return out;
}

}  // namespace ocvkit
