/*
 * Copyright 2026 The adkf Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <array>
#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "adkf/error.hpp"

namespace adkf {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Relative jitter rungs, multiplied by the mean diagonal of the matrix.
inline constexpr std::array<double, 4> kJitterLadder = {1e-8, 1e-6, 1e-4, 1e-2};

/**
 * Cholesky factor of A + jitter * I.
 *
 * `jitter_applied` is absolute and is zero when the bare matrix factorized.
 * Every quantity derived from the factor (solves, log-determinants, and the
 * losses built on them) refers to the jittered matrix.
 */
struct SpdFactor {
  Matrix lower;
  double jitter_applied = 0.0;

  [[nodiscard]] Eigen::Index dimension() const noexcept { return lower.rows(); }
};

namespace detail {

// Plain row-oriented Cholesky. Returns false on a non-positive pivot.
inline bool try_cholesky(const Matrix& a, double jitter, Matrix& lower) {
  const Eigen::Index n = a.rows();
  lower.setZero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double diag = a(j, j) + jitter;
    for (Eigen::Index k = 0; k < j; ++k) diag -= lower(j, k) * lower(j, k);
    if (!(diag > 0.0) || !std::isfinite(diag)) return false;
    const double ljj = std::sqrt(diag);
    lower(j, j) = ljj;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (Eigen::Index k = 0; k < j; ++k) s -= lower(i, k) * lower(j, k);
      lower(i, j) = s / ljj;
    }
  }
  return true;
}

}  // namespace detail

/// Factorizes (A + Aᵀ)/2, climbing the jitter ladder on failure.
inline SpdFactor cholesky_decompose(const Matrix& matrix) {
  require(matrix.rows() == matrix.cols(), ErrorCode::kDimensionMismatch,
          "cholesky_decompose expects a square matrix, got " + std::to_string(matrix.rows()) + "x" +
              std::to_string(matrix.cols()));
  require(matrix.rows() >= 1, ErrorCode::kDimensionMismatch, "cholesky_decompose expects N >= 1");
  const Matrix sym = 0.5 * (matrix + matrix.transpose());

  SpdFactor factor;
  if (detail::try_cholesky(sym, 0.0, factor.lower)) return factor;

  const double mean_diag = std::abs(sym.diagonal().mean());
  const double scale = mean_diag > 0.0 ? mean_diag : 1.0;
  for (double rung : kJitterLadder) {
    const double jitter = rung * scale;
    if (detail::try_cholesky(sym, jitter, factor.lower)) {
      factor.jitter_applied = jitter;
      return factor;
    }
  }
  throw Error(ErrorCode::kNotPositiveDefinite,
              "matrix of size " + std::to_string(matrix.rows()) + " is not positive definite even with jitter " +
                  std::to_string(kJitterLadder.back() * scale));
}

/// Solves (A + jitter I) X = rhs.
inline Matrix solve_psd(const SpdFactor& factor, const Matrix& rhs) {
  require(rhs.rows() == factor.dimension(), ErrorCode::kDimensionMismatch,
          "solve_psd: factor has dimension " + std::to_string(factor.dimension()) + " but rhs has " +
              std::to_string(rhs.rows()) + " rows");
  const auto lower = factor.lower.triangularView<Eigen::Lower>();
  Matrix x = lower.solve(rhs);
  lower.transpose().solveInPlace(x);
  return x;
}

inline Vector solve_psd(const SpdFactor& factor, const Vector& rhs) {
  return solve_psd(factor, Matrix(rhs)).col(0);
}

inline double log_det(const SpdFactor& factor) {
  return 2.0 * factor.lower.diagonal().array().log().sum();
}

/// (A + jitter I)⁻¹, for the small dense matrices used in gradient traces.
inline Matrix inverse_psd(const SpdFactor& factor) {
  return solve_psd(factor, Matrix(Matrix::Identity(factor.dimension(), factor.dimension())));
}

}  // namespace adkf
