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
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>

#include <Eigen/Eigenvalues>

#include "adkf/core_math.hpp"
#include "adkf/error.hpp"
#include "adkf/gp.hpp"
#include "adkf/inner_solver.hpp"
#include "adkf/kernels.hpp"

namespace adkf {

/// Everything the hypergradient computation produces for one task.
struct HypergradientReport {
  Vector g1;  // ∂L_V/∂φ at (φ, θ*)
  Vector g2;  // ∂L_V/∂θ at (φ, θ*)
  Matrix hessian;
  Vector v;   // solves vH = g2 on the free coordinates of θ
  Vector vP;  // v · ∂²L_T/∂θ∂φ
  Vector hypergradient;
  InnerSolveResult inner;
  double hessian_min_eigenvalue = 0.0;
  double hessian_jitter = 0.0;
  double val_loss = 0.0;
};

struct HypergradientConfig {
  InnerSolverConfig inner;
  /// Start the inner solve here instead of at the median heuristic.
  std::optional<KernelParams> init_override;
  double prior_log_sigma = kDefaultPriorLogSigma;
  /// Stop after g1 and use it as the update direction (the ∂θ*/∂φ = 0 ablation).
  bool direct_gradient_only = false;
};

inline void require_converged(const InnerSolveResult& inner) {
  require(inner.converged, ErrorCode::kUnconvergedInnerSolve,
          "inner solve did not converge (grad inf-norm " + std::to_string(inner.grad_inf_norm) + ")");
}

/// ∂²L_T/∂θ∂θᵀ at θ*, from central differences of the analytic ∇_θ L_T.
inline Matrix hessian_theta(const TrainObjective& objective, const InnerSolveResult& inner) {
  require_converged(inner);
  const Vector theta = to_theta(objective.spec(), inner.theta_star);
  const Eigen::Index n = theta.size();
  Matrix h(n, n);
  Vector gp, gm;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double step = 1e-4 * std::max(1.0, std::abs(theta[i]));
    Vector tp = theta, tm = theta;
    tp[i] += step;
    tm[i] -= step;
    objective(tp, gp);
    objective(tm, gm);
    h.col(i) = (gp - gm) / (2.0 * step);
  }
  return 0.5 * (h + h.transpose());
}

/// v · P = ∂/∂φ [vᵀ ∇_θ L_T(φ, θ)] at θ*, as a directional difference of ∇_φ L_T along v.
inline Vector mixed_vjp(const TrainObjective& objective, const InnerSolveResult& inner, const Vector& v) {
  require_converged(inner);
  const Vector theta = to_theta(objective.spec(), inner.theta_star);
  require(v.size() == theta.size(), ErrorCode::kDimensionMismatch, "v must have the dimension of theta");
  const double norm = v.norm();
  if (norm == 0.0) return Vector::Zero(objective.phi_size());
  const double eps = 1e-4 * std::max(1.0, theta.norm());
  const Vector dir = v / norm;
  const Vector plus = objective.grad_phi(theta + eps * dir);
  const Vector minus = objective.grad_phi(theta - eps * dir);
  return (plus - minus) * (norm / (2.0 * eps));
}

/// Exact hypergradient dL_V/dφ = g1 − vP for one task.
inline HypergradientReport compute_hypergradient(const std::optional<ExtractorParams>& phi, const KernelSpec& spec,
                                                 const Task& task, const HypergradientConfig& config) {
  require(task.support_size() >= 1 && task.query_size() >= 1, ErrorCode::kInvalidArgument,
          "hypergradient needs nonempty support and query sets");
  HypergradientReport report;

  // The median heuristic runs on the features L_T actually sees.
  KernelParams init;
  if (config.init_override) {
    init = *config.init_override;
  } else if (spec.has_lengthscale()) {
    const auto& frozen = config.inner.hooks.frozen_train_extractor;
    const Matrix h = frozen ? forward(*frozen, task.support_x).output : extract_features(phi, task.support_x);
    init = median_heuristic_init(h, config.prior_log_sigma);
  }
  const TrainObjective objective(phi, spec, task, init, config.inner.hooks);
  report.inner = adapt_theta(objective, init, config.inner);
  require_converged(report.inner);

  DeepKernelModel model{phi, report.inner.theta_star, spec};
  LossResult lv = val_loss(model, task, {.theta = true, .phi = true});
  report.val_loss = lv.value;
  report.g1 = phi ? std::move(lv.grad_phi) : Vector::Zero(0);
  report.g2 = std::move(lv.grad_theta);
  const Eigen::Index n = report.g2.size();

  if (config.direct_gradient_only) {
    report.hessian = Matrix::Zero(n, n);
    report.v = Vector::Zero(n);
    report.vP = Vector::Zero(report.g1.size());
    report.hypergradient = report.g1;
    return report;
  }

  report.hessian = hessian_theta(objective, report.inner);
  report.hessian_min_eigenvalue = Eigen::SelfAdjointEigenSolver<Matrix>(report.hessian).eigenvalues().minCoeff();

  // A noise coordinate pinned to its floor is constant in φ, so it drops out of the IFT system.
  std::vector<Eigen::Index> free;
  for (Eigen::Index i = 0; i < n; ++i)
    if (!(report.inner.noise_at_floor && i == noise_index(spec))) free.push_back(i);
  const auto m = static_cast<Eigen::Index>(free.size());
  Matrix hf(m, m);
  Vector gf(m);
  for (Eigen::Index a = 0; a < m; ++a) {
    gf[a] = report.g2[free[a]];
    for (Eigen::Index b = 0; b < m; ++b) hf(a, b) = report.hessian(free[a], free[b]);
  }
  report.v = Vector::Zero(n);
  if (m > 0) {
    SpdFactor factor;
    try {
      factor = cholesky_decompose(hf);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNotPositiveDefinite) throw;
      throw Error(ErrorCode::kHessianSingular, "inner Hessian is singular beyond the jitter ladder");
    }
    report.hessian_jitter = factor.jitter_applied;
    const Vector vf = solve_psd(factor, gf);
    for (Eigen::Index a = 0; a < m; ++a) report.v[free[a]] = vf[a];
  }
  report.vP = mixed_vjp(objective, report.inner, report.v);
  report.hypergradient = report.g1 - report.vP;
  return report;
}

namespace detail {

inline void write_vector(std::ostream& out, const char* name, const Vector& v) {
  out << name << '=';
  for (Eigen::Index i = 0; i < v.size(); ++i) out << (i ? "," : "") << v[i];
  out << '\n';
}

}  // namespace detail

/// Debug dump: one `field=value` line per report field, vectors comma-separated, matrices row-major.
inline void write_report(std::ostream& out, const HypergradientReport& r) {
  const auto old_precision = out.precision(17);
  detail::write_vector(out, "g1", r.g1);
  detail::write_vector(out, "g2", r.g2);
  out << "hessian=";
  for (Eigen::Index i = 0; i < r.hessian.rows(); ++i)
    for (Eigen::Index j = 0; j < r.hessian.cols(); ++j) out << (i || j ? "," : "") << r.hessian(i, j);
  out << '\n';
  detail::write_vector(out, "v", r.v);
  detail::write_vector(out, "vP", r.vP);
  detail::write_vector(out, "hypergradient", r.hypergradient);
  out << "inner.log_lengthscale=" << r.inner.theta_star.log_lengthscale << '\n'
      << "inner.log_signal_amp=" << r.inner.theta_star.log_signal_amp << '\n'
      << "inner.log_noise_std=" << r.inner.theta_star.log_noise_std << '\n'
      << "inner.final_loss=" << r.inner.final_loss << '\n'
      << "inner.grad_inf_norm=" << r.inner.grad_inf_norm << '\n'
      << "inner.iterations=" << r.inner.iterations << '\n'
      << "inner.converged=" << (r.inner.converged ? "true" : "false") << '\n'
      << "inner.restarts_used=" << r.inner.restarts_used << '\n'
      << "hessian_min_eigenvalue=" << r.hessian_min_eigenvalue << '\n';
  out.precision(old_precision);
}

}  // namespace adkf
