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

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "adkf/error.hpp"
#include "adkf/feature_extractor.hpp"
#include "adkf/gp.hpp"
#include "adkf/kernels.hpp"
#include "adkf/lbfgs.hpp"
#include "adkf/random.hpp"

namespace adkf {

/// Test hook: replaces L_T with ½(θ − c)ᵀA(θ − c), independent of φ and the data.
struct QuadraticSurrogate {
  Matrix a;
  Vector center;
};

struct TrainLossHooks {
  std::optional<QuadraticSurrogate> surrogate;
  /// When set, L_T is evaluated on features from this snapshot, so it no longer depends on φ.
  std::shared_ptr<const ExtractorParams> frozen_train_extractor;
};

/**
 * L_T(φ, ·, S) as a function of θ alone, with the support features computed
 * once. Also exposes ∇_φ L_T at any θ for the mixed partials.
 */
class TrainObjective {
 public:
  TrainObjective(const std::optional<ExtractorParams>& phi, const KernelSpec& spec, const Task& task,
                 KernelParams base, const TrainLossHooks& hooks = {})
      : phi_(phi), spec_(spec), base_(std::move(base)), hooks_(hooks), labels_(task.support_y) {
    if (hooks_.surrogate) return;
    if (hooks_.frozen_train_extractor) {
      features_ = forward(*hooks_.frozen_train_extractor, task.support_x).output;
    } else if (phi_) {
      fwd_ = forward(*phi_, task.support_x);
      features_ = fwd_->output;
    } else {
      features_ = task.support_x;
    }
  }

  [[nodiscard]] const KernelSpec& spec() const noexcept { return spec_; }
  [[nodiscard]] const Matrix& features() const noexcept { return features_; }
  [[nodiscard]] KernelParams params(const Vector& theta) const { return with_theta(spec_, base_, theta); }
  [[nodiscard]] Eigen::Index phi_size() const { return phi_ ? phi_->size() : 0; }

  /// L_T and ∇_θ L_T.
  double operator()(const Vector& theta, Vector& grad) const {
    if (hooks_.surrogate) {
      const Vector d = theta - hooks_.surrogate->center;
      grad = hooks_.surrogate->a * d;
      return 0.5 * d.dot(hooks_.surrogate->a * d);
    }
    FeatureLoss fl = train_loss_on_features(spec_, params(theta), features_, labels_, true, false);
    grad = std::move(fl.grad_theta);
    return fl.value;
  }

  [[nodiscard]] double value(const Vector& theta) const {
    Vector g;
    return (*this)(theta, g);
  }

  /// ∇_φ L_T at (φ, θ); identically zero under either hook.
  [[nodiscard]] Vector grad_phi(const Vector& theta) const {
    if (!phi_) return Vector::Zero(0);
    if (hooks_.surrogate || hooks_.frozen_train_extractor) return Vector::Zero(phi_->size());
    FeatureLoss fl = train_loss_on_features(spec_, params(theta), features_, labels_, false, true);
    return vjp_params(*phi_, fwd_->trace, fl.grad_features);
  }

 private:
  std::optional<ExtractorParams> phi_;
  KernelSpec spec_;
  KernelParams base_;
  TrainLossHooks hooks_;
  Vector labels_;
  Matrix features_;
  std::optional<ForwardResult> fwd_;
};

struct InnerSolverConfig {
  LbfgsOptions lbfgs;
  int max_restarts = 1;
  double restart_noise_std = 0.1;
  double noise_floor = kNoiseFloor;
  std::uint64_t seed = 0;
  TrainLossHooks hooks;
};

struct InnerSolveResult {
  KernelParams theta_star;
  double final_loss = 0.0;
  double grad_inf_norm = 0.0;  // projected onto the noise floor
  int iterations = 0;
  bool converged = false;
  int restarts_used = 0;
  /// The noise coordinate sits on its floor with the loss pushing it lower.
  bool noise_at_floor = false;
};

inline Vector theta_lower_bounds(const KernelSpec& spec, double noise_floor) {
  Vector lb = Vector::Constant(theta_dim(spec), -std::numeric_limits<double>::infinity());
  lb[noise_index(spec)] = std::log(noise_floor);
  return lb;
}

/// θ*(φ, S): MAP adaptation of the base-kernel parameters with L-BFGS.
inline InnerSolveResult adapt_theta(const TrainObjective& objective, const KernelParams& init,
                                    const InnerSolverConfig& config) {
  const KernelSpec& spec = objective.spec();
  const Vector lower = theta_lower_bounds(spec, config.noise_floor);
  auto safe = [&](const Vector& theta, Vector& grad) -> double {
    try {
      return objective(theta, grad);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNotPositiveDefinite) throw;
      grad = Vector::Constant(theta.size(), std::numeric_limits<double>::quiet_NaN());
      return std::numeric_limits<double>::quiet_NaN();
    }
  };

  const Vector theta0 = to_theta(spec, init).cwiseMax(lower);
  Vector g0;
  const double init_loss = safe(theta0, g0);
  Rng rng(hash64(config.seed, "inner_restart"));

  std::vector<LbfgsResult> attempts;
  int restarts = 0;
  int total_iterations = 0;
  Vector start = theta0;
  for (int attempt = 0; attempt <= config.max_restarts; ++attempt) {
    LbfgsResult r = lbfgs_minimize(safe, start, config.lbfgs, lower);
    total_iterations += r.iterations;
    const LbfgsStatus status = r.status;
    if (std::isfinite(r.f)) attempts.push_back(std::move(r));
    // Only line-search failures and non-finite evaluations trigger a restart.
    if (status == LbfgsStatus::kConverged || status == LbfgsStatus::kMaxIterations) break;
    if (attempt == config.max_restarts) break;
    ++restarts;
    start = theta0;
    for (Eigen::Index i = 0; i < start.size(); ++i) start[i] += config.restart_noise_std * rng.normal();
    start = start.cwiseMax(lower);
  }

  // Prefer the lowest converged iterate that does not lose to the initial point.
  const LbfgsResult* best = nullptr;
  for (const auto& r : attempts)
    if (r.status == LbfgsStatus::kConverged && !(r.f > init_loss) && (!best || r.f < best->f)) best = &r;
  const bool best_converged = best != nullptr;
  if (!best)
    for (const auto& r : attempts)
      if (!best || r.f < best->f) best = &r;

  InnerSolveResult out;
  out.iterations = total_iterations;
  out.restarts_used = restarts;
  if (!best) {
    out.theta_star = init;
    out.final_loss = init_loss;
    out.grad_inf_norm = std::numeric_limits<double>::infinity();
    out.converged = false;
    return out;
  }
  out.theta_star = objective.params(best->x);
  out.final_loss = best->f;
  out.grad_inf_norm = detail::projected_gradient(best->x, best->grad, lower).lpNorm<Eigen::Infinity>();
  out.converged = best_converged;
  const Eigen::Index ni = noise_index(spec);
  // L-BFGS can stop a rounding error above the bound; count that as on it.
  const double slack = 1e-8 * std::max(1.0, std::abs(lower[ni]));
  out.noise_at_floor = best->x[ni] - lower[ni] <= slack && best->grad[ni] > 0.0;
  return out;
}

inline InnerSolveResult adapt_theta(const std::optional<ExtractorParams>& phi, const KernelSpec& spec,
                                    const Task& task, const KernelParams& init, const InnerSolverConfig& config) {
  const TrainObjective objective(phi, spec, task, init, config.hooks);
  return adapt_theta(objective, init, config);
}

}  // namespace adkf
