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

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "adkf/core_math.hpp"
#include "adkf/error.hpp"

namespace adkf {

enum class KernelFamily { kMatern52, kTanimoto };
enum class InputKind { kDense, kCounts };

inline std::string_view to_string(KernelFamily f) {
  return f == KernelFamily::kMatern52 ? "matern52" : "tanimoto";
}

inline std::string_view to_string(InputKind k) { return k == InputKind::kDense ? "dense" : "counts"; }

inline KernelFamily parse_kernel_family(std::string_view text) {
  if (text == "matern52") return KernelFamily::kMatern52;
  if (text == "tanimoto") return KernelFamily::kTanimoto;
  throw Error(ErrorCode::kInvalidArgument, "unknown kernel family '" + std::string(text) + "'");
}

struct KernelSpec {
  KernelFamily family = KernelFamily::kMatern52;
  InputKind input_kind = InputKind::kDense;

  static KernelSpec matern52() { return {KernelFamily::kMatern52, InputKind::kDense}; }
  static KernelSpec tanimoto() { return {KernelFamily::kTanimoto, InputKind::kCounts}; }

  [[nodiscard]] bool has_lengthscale() const noexcept { return family == KernelFamily::kMatern52; }

  friend bool operator==(const KernelSpec&, const KernelSpec&) = default;
};

/// Normal prior on log ℓ (a log-normal prior on ℓ without the Jacobian term).
struct LengthscalePrior {
  double log_mu = 0.0;
  double log_sigma = 1.0;

  friend bool operator==(const LengthscalePrior&, const LengthscalePrior&) = default;
};

inline constexpr double kDefaultPriorLogSigma = 1.0;
inline constexpr double kNoiseFloor = 1e-4;

/// Base-kernel parameters θ, all in log space.
struct KernelParams {
  double log_lengthscale = 0.0;
  double log_signal_amp = 0.0;
  double log_noise_std = std::log(0.1);
  std::optional<LengthscalePrior> prior;

  [[nodiscard]] double lengthscale() const { return std::exp(log_lengthscale); }
  [[nodiscard]] double signal_variance() const { return std::exp(2.0 * log_signal_amp); }
  [[nodiscard]] double noise_variance() const { return std::exp(2.0 * log_noise_std); }

  friend bool operator==(const KernelParams&, const KernelParams&) = default;
};

/// θ as an unconstrained vector. Matérn: (log ℓ, log σ_f, log σ); Tanimoto: (log σ_f, log σ).
inline Eigen::Index theta_dim(const KernelSpec& spec) { return spec.has_lengthscale() ? 3 : 2; }

inline Vector to_theta(const KernelSpec& spec, const KernelParams& p) {
  if (spec.has_lengthscale()) return Vector{{p.log_lengthscale, p.log_signal_amp, p.log_noise_std}};
  return Vector{{p.log_signal_amp, p.log_noise_std}};
}

inline KernelParams with_theta(const KernelSpec& spec, KernelParams p, const Vector& theta) {
  require(theta.size() == theta_dim(spec), ErrorCode::kDimensionMismatch, "theta has the wrong length");
  if (spec.has_lengthscale()) {
    p.log_lengthscale = theta[0];
    p.log_signal_amp = theta[1];
    p.log_noise_std = theta[2];
  } else {
    p.log_signal_amp = theta[0];
    p.log_noise_std = theta[1];
  }
  return p;
}

inline Eigen::Index noise_index(const KernelSpec& spec) { return theta_dim(spec) - 1; }

namespace detail {

inline void check_inputs(const KernelSpec& spec, const Matrix& rows, const Matrix& cols) {
  require(rows.cols() == cols.cols(), ErrorCode::kDimensionMismatch,
          "kernel inputs have dimensions " + std::to_string(rows.cols()) + " and " + std::to_string(cols.cols()));
  if (spec.family == KernelFamily::kTanimoto) {
    require((rows.array() >= 0.0).all() && (cols.array() >= 0.0).all(), ErrorCode::kNegativeCounts,
            "Tanimoto kernel requires nonnegative count vectors");
  }
}

inline constexpr double kSqrt5 = 2.2360679774997896964091736687313;

inline double tanimoto_ratio(const Matrix& a, Eigen::Index i, const Matrix& b, Eigen::Index j) {
  const double ab = a.row(i).dot(b.row(j));
  const double aa = a.row(i).squaredNorm();
  const double bb = b.row(j).squaredNorm();
  const double denom = aa + bb - ab;
  if (denom <= 0.0) return 1.0;  // both all-zero
  return ab / denom;
}

}  // namespace detail

/// c_θ(rows, cols) without observation noise.
inline Matrix kernel_matrix(const KernelSpec& spec, const KernelParams& params, const Matrix& rows,
                            const Matrix& cols) {
  detail::check_inputs(spec, rows, cols);
  const double var = params.signal_variance();
  Matrix k(rows.rows(), cols.rows());
  if (spec.family == KernelFamily::kMatern52) {
    const double inv_ell = 1.0 / params.lengthscale();
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
      for (Eigen::Index j = 0; j < cols.rows(); ++j) {
        const double r = detail::kSqrt5 * (rows.row(i) - cols.row(j)).norm() * inv_ell;
        k(i, j) = var * (1.0 + r + r * r / 3.0) * std::exp(-r);
      }
    }
  } else {
    for (Eigen::Index i = 0; i < rows.rows(); ++i)
      for (Eigen::Index j = 0; j < cols.rows(); ++j) k(i, j) = var * detail::tanimoto_ratio(rows, i, cols, j);
  }
  return k;
}

/// ∂K/∂θ_j for the kernel components of θ (noise excluded): Matérn returns
/// {∂/∂log ℓ, ∂/∂log σ_f}, Tanimoto returns {∂/∂log σ_f}.
inline std::vector<Matrix> kernel_grad_theta(const KernelSpec& spec, const KernelParams& params,
                                             const Matrix& rows, const Matrix& cols) {
  Matrix k = kernel_matrix(spec, params, rows, cols);
  std::vector<Matrix> grads;
  if (spec.family == KernelFamily::kMatern52) {
    const double var = params.signal_variance();
    const double inv_ell = 1.0 / params.lengthscale();
    Matrix d_log_ell(rows.rows(), cols.rows());
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
      for (Eigen::Index j = 0; j < cols.rows(); ++j) {
        const double r = detail::kSqrt5 * (rows.row(i) - cols.row(j)).norm() * inv_ell;
        d_log_ell(i, j) = var * (r * r / 3.0) * (1.0 + r) * std::exp(-r);
      }
    }
    grads.push_back(std::move(d_log_ell));
  }
  grads.push_back(2.0 * k);
  return grads;
}

/**
 * Pulls a cotangent W = ∂L/∂K back to the kernel inputs:
 * returns (Σ_j W_ij ∂k(a_i,b_j)/∂a_i, Σ_i W_ij ∂k(a_i,b_j)/∂b_j).
 * Matérn 5/2 only; the Tanimoto kernel is used on fixed fingerprints.
 */
inline std::pair<Matrix, Matrix> kernel_input_vjp(const KernelSpec& spec, const KernelParams& params,
                                                  const Matrix& rows, const Matrix& cols, const Matrix& cotangent) {
  detail::check_inputs(spec, rows, cols);
  require(spec.family == KernelFamily::kMatern52, ErrorCode::kInvalidArgument,
          "input gradients are only available for the Matern 5/2 kernel");
  require(cotangent.rows() == rows.rows() && cotangent.cols() == cols.rows(), ErrorCode::kDimensionMismatch,
          "kernel cotangent shape mismatch");
  const double var = params.signal_variance();
  const double ell = params.lengthscale();
  const double coef = -var * 5.0 / (3.0 * ell * ell);
  Matrix grad_rows = Matrix::Zero(rows.rows(), rows.cols());
  Matrix grad_cols = Matrix::Zero(cols.rows(), cols.cols());
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    for (Eigen::Index j = 0; j < cols.rows(); ++j) {
      const double w = cotangent(i, j);
      if (w == 0.0) continue;
      const Eigen::RowVectorXd diff = rows.row(i) - cols.row(j);
      const double r = detail::kSqrt5 * diff.norm() / ell;
      const double s = w * coef * (1.0 + r) * std::exp(-r);
      grad_rows.row(i) += s * diff;
      grad_cols.row(j) -= s * diff;
    }
  }
  return {std::move(grad_rows), std::move(grad_cols)};
}

/// Median of pairwise distances (nonzero only) initializes log ℓ; the prior is centered there.
inline KernelParams median_heuristic_init(const Matrix& features, double prior_log_sigma = kDefaultPriorLogSigma) {
  require(features.rows() >= 2, ErrorCode::kTooFewPoints,
          "median heuristic needs at least 2 points, got " + std::to_string(features.rows()));
  std::vector<double> dists;
  dists.reserve(static_cast<std::size_t>(features.rows() * (features.rows() - 1) / 2));
  for (Eigen::Index i = 0; i < features.rows(); ++i)
    for (Eigen::Index j = i + 1; j < features.rows(); ++j) {
      const double d = (features.row(i) - features.row(j)).norm();
      if (d > 0.0) dists.push_back(d);
    }
  double median = 1.0;
  if (!dists.empty()) {
    std::sort(dists.begin(), dists.end());
    const std::size_t n = dists.size();
    median = n % 2 == 1 ? dists[n / 2] : 0.5 * (dists[n / 2 - 1] + dists[n / 2]);
  }
  KernelParams p;
  p.log_lengthscale = std::log(median);
  p.log_signal_amp = 0.0;
  p.log_noise_std = std::log(0.1);
  p.prior = LengthscalePrior{p.log_lengthscale, prior_log_sigma};
  return p;
}

struct PriorTerm {
  double value = 0.0;
  double grad_log_lengthscale = 0.0;
};

/// Log-density of N(log_mu, log_sigma²) at log ℓ and its derivative. Zero when no prior is set.
inline PriorTerm lengthscale_log_prior(const KernelParams& params) {
  if (!params.prior) return {};
  const double mu = params.prior->log_mu;
  const double s = params.prior->log_sigma;
  const double z = (params.log_lengthscale - mu) / s;
  return {-0.5 * z * z - std::log(s * std::sqrt(2.0 * std::numbers::pi)), -z / s};
}

}  // namespace adkf
