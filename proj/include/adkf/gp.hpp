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
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include "adkf/core_math.hpp"
#include "adkf/error.hpp"
#include "adkf/feature_extractor.hpp"
#include "adkf/kernels.hpp"

namespace adkf {

enum class TaskKind { kRegression, kClassification };

inline std::string_view to_string(TaskKind k) {
  return k == TaskKind::kRegression ? "regression" : "classification";
}

inline TaskKind parse_task_kind(std::string_view text) {
  if (text == "regression") return TaskKind::kRegression;
  if (text == "classification") return TaskKind::kClassification;
  throw Error(ErrorCode::kInvalidArgument, "unknown task kind '" + std::string(text) + "'");
}

/// A few-shot task split into support (adaptation) and query (evaluation) points.
struct Task {
  std::string task_id;
  TaskKind kind = TaskKind::kRegression;
  InputKind feature_kind = InputKind::kDense;
  Matrix support_x;
  Vector support_y;
  Matrix query_x;
  Vector query_y;

  [[nodiscard]] Eigen::Index support_size() const { return support_x.rows(); }
  [[nodiscard]] Eigen::Index query_size() const { return query_x.rows(); }
};

inline void validate_labels(TaskKind kind, const Vector& y) {
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    require(std::isfinite(y[i]), ErrorCode::kInvalidArgument, "labels must be finite");
    if (kind == TaskKind::kClassification)
      require(y[i] == 1.0 || y[i] == -1.0, ErrorCode::kInvalidArgument, "classification labels must be +1 or -1");
  }
}

/// ψ = (θ, φ). Without an extractor the kernel acts on the raw inputs.
struct DeepKernelModel {
  std::optional<ExtractorParams> extractor;
  KernelParams kernel;
  KernelSpec spec = KernelSpec::matern52();
};

inline Matrix extract_features(const std::optional<ExtractorParams>& extractor, const Matrix& x) {
  if (!extractor) return x;
  return forward(*extractor, x).output;
}

/// Per-task label standardization (regression only). Predictions map back with mean + std * value.
struct LabelScaling {
  double mean = 0.0;
  double std = 1.0;

  [[nodiscard]] double to_raw(double v) const { return mean + std * v; }
};

inline constexpr double kLabelStdFloor = 1e-8;

inline LabelScaling fit_scaling(const Vector& y) {
  LabelScaling s;
  if (y.size() == 0) return s;
  s.mean = y.mean();
  const double var = y.size() > 1 ? (y.array() - s.mean).square().sum() / static_cast<double>(y.size()) : 0.0;
  s.std = std::max(std::sqrt(var), kLabelStdFloor);
  return s;
}

/// Standardizes regression labels with support statistics; classification tasks pass through.
inline std::pair<Task, LabelScaling> standardize_task(const Task& task, bool enabled = true) {
  if (!enabled || task.kind == TaskKind::kClassification || task.support_size() == 0) return {task, LabelScaling{}};
  const LabelScaling s = fit_scaling(task.support_y);
  Task out = task;
  out.support_y = (task.support_y.array() - s.mean) / s.std;
  out.query_y = (task.query_y.array() - s.mean) / s.std;
  return {std::move(out), s};
}

struct GradRequest {
  bool theta = false;
  bool phi = false;
};

struct LossResult {
  double value = 0.0;
  Vector grad_theta;  // empty unless requested
  Vector grad_phi;    // empty unless requested and the model has an extractor
};

/// NLML with its gradient with respect to θ and the feature rows.
struct FeatureLoss {
  double value = 0.0;
  Vector grad_theta;
  Matrix grad_features;
};

inline constexpr double kHalfLog2Pi = 0.91893853320467274178032973640562;

/**
 * NLML = ½ yᵀK⁻¹y + ½ log det K + (N/2) log 2π with K = c_θ(H,H) + σ²I.
 * Gradients use W = ∂L/∂K = ½(K⁻¹ − ααᵀ), α = K⁻¹y.
 */
inline FeatureLoss nlml_on_features(const KernelSpec& spec, const KernelParams& params, const Matrix& features,
                                    const Vector& y, bool want_theta, bool want_features) {
  require(features.rows() == y.size(), ErrorCode::kDimensionMismatch, "feature rows and labels differ in length");
  FeatureLoss out;
  const Eigen::Index n = y.size();
  if (n == 0) {
    if (want_theta) out.grad_theta = Vector::Zero(theta_dim(spec));
    if (want_features) out.grad_features = Matrix::Zero(0, features.cols());
    return out;
  }
  Matrix k = kernel_matrix(spec, params, features, features);
  k.diagonal().array() += params.noise_variance();
  const SpdFactor factor = cholesky_decompose(k);
  const Vector alpha = solve_psd(factor, y);
  out.value = 0.5 * y.dot(alpha) + 0.5 * log_det(factor) + static_cast<double>(n) * kHalfLog2Pi;
  if (!want_theta && !want_features) return out;

  Matrix w = inverse_psd(factor);
  w.noalias() -= alpha * alpha.transpose();
  w *= 0.5;
  if (want_theta) {
    out.grad_theta = Vector::Zero(theta_dim(spec));
    const auto dk = kernel_grad_theta(spec, params, features, features);
    for (std::size_t j = 0; j < dk.size(); ++j) out.grad_theta[static_cast<Eigen::Index>(j)] = (w.array() * dk[j].array()).sum();
    out.grad_theta[noise_index(spec)] = 2.0 * params.noise_variance() * w.trace();
  }
  if (want_features) {
    auto [gr, gc] = kernel_input_vjp(spec, params, features, features, w);
    out.grad_features = gr + gc;
  }
  return out;
}

/// L_T on precomputed support features: NLML minus the lengthscale log-prior.
inline FeatureLoss train_loss_on_features(const KernelSpec& spec, const KernelParams& params, const Matrix& features,
                                          const Vector& y, bool want_theta, bool want_features) {
  FeatureLoss out = nlml_on_features(spec, params, features, y, want_theta, want_features);
  if (spec.has_lengthscale()) {
    const PriorTerm prior = lengthscale_log_prior(params);
    out.value -= prior.value;
    if (want_theta) out.grad_theta[0] -= prior.grad_log_lengthscale;
  }
  return out;
}

inline Matrix stack_rows(const Matrix& top, const Matrix& bottom) {
  if (top.rows() == 0) return bottom;
  if (bottom.rows() == 0) return top;
  Matrix out(top.rows() + bottom.rows(), top.cols());
  out << top, bottom;
  return out;
}

inline Vector stack(const Vector& top, const Vector& bottom) {
  Vector out(top.size() + bottom.size());
  out << top, bottom;
  return out;
}

/// L_V on precomputed features: −log N(y_Q; conditional of the joint GP given the support).
/// Computed as NLML(S ∪ Q) − NLML(S), which is exactly the joint conditional density.
inline FeatureLoss val_loss_on_features(const KernelSpec& spec, const KernelParams& params, const Matrix& support_h,
                                        const Vector& support_y, const Matrix& query_h, const Vector& query_y,
                                        bool want_theta, bool want_features) {
  require(query_y.size() >= 1, ErrorCode::kInvalidArgument, "validation loss needs at least one query point");
  const Matrix all_h = stack_rows(support_h, query_h);
  const Vector all_y = stack(support_y, query_y);
  FeatureLoss joint = nlml_on_features(spec, params, all_h, all_y, want_theta, want_features);
  const FeatureLoss marginal = nlml_on_features(spec, params, support_h, support_y, want_theta, want_features);
  joint.value -= marginal.value;
  if (want_theta) joint.grad_theta -= marginal.grad_theta;
  if (want_features && support_h.rows() > 0) joint.grad_features.topRows(support_h.rows()) -= marginal.grad_features;
  return joint;
}

/// L_T(φ, θ, S): NLML on the support features minus the lengthscale log-prior.
inline LossResult train_loss(const DeepKernelModel& model, const Task& task, GradRequest want = {}) {
  require(task.support_size() >= 1, ErrorCode::kInvalidArgument, "train loss needs a nonempty support set");
  LossResult out;
  const bool phi = want.phi && model.extractor.has_value();
  std::optional<ForwardResult> fwd;
  if (model.extractor) fwd = forward(*model.extractor, task.support_x);
  const Matrix& h = fwd ? fwd->output : task.support_x;
  FeatureLoss fl = train_loss_on_features(model.spec, model.kernel, h, task.support_y, want.theta, phi);
  out.value = fl.value;
  if (want.theta) out.grad_theta = std::move(fl.grad_theta);
  if (phi) out.grad_phi = vjp_params(*model.extractor, fwd->trace, fl.grad_features);
  return out;
}

/// NLML over support ∪ query treated as one dataset, no prior. The per-task DKT objective.
inline LossResult whole_task_nlml(const DeepKernelModel& model, const Task& task, GradRequest want = {}) {
  LossResult out;
  const bool phi = want.phi && model.extractor.has_value();
  const Matrix x = stack_rows(task.support_x, task.query_x);
  const Vector y = stack(task.support_y, task.query_y);
  std::optional<ForwardResult> fwd;
  if (model.extractor) fwd = forward(*model.extractor, x);
  const Matrix& h = fwd ? fwd->output : x;
  FeatureLoss fl = nlml_on_features(model.spec, model.kernel, h, y, want.theta, phi);
  out.value = fl.value;
  if (want.theta) out.grad_theta = std::move(fl.grad_theta);
  if (phi) out.grad_phi = vjp_params(*model.extractor, fwd->trace, fl.grad_features);
  return out;
}

/// L_V(φ, θ, T): negative log joint predictive density of the query labels.
inline LossResult val_loss(const DeepKernelModel& model, const Task& task, GradRequest want = {}) {
  LossResult out;
  const bool phi = want.phi && model.extractor.has_value();
  const Matrix x = stack_rows(task.support_x, task.query_x);
  std::optional<ForwardResult> fwd;
  if (model.extractor) fwd = forward(*model.extractor, x);
  const Matrix& h = fwd ? fwd->output : x;
  const Eigen::Index ns = task.support_size();
  FeatureLoss fl = val_loss_on_features(model.spec, model.kernel, h.topRows(ns), task.support_y,
                                        h.bottomRows(task.query_size()), task.query_y, want.theta, phi);
  out.value = fl.value;
  if (want.theta) out.grad_theta = std::move(fl.grad_theta);
  if (phi) out.grad_phi = vjp_params(*model.extractor, fwd->trace, fl.grad_features);
  return out;
}

/// Joint posterior over the query set; the covariance includes σ² on the diagonal.
struct PosteriorPredictive {
  Vector mean;
  Matrix covariance;
};

inline PosteriorPredictive posterior_on_features(const KernelSpec& spec, const KernelParams& params,
                                                 const Matrix& support_h, const Vector& support_y,
                                                 const Matrix& query_h) {
  PosteriorPredictive post;
  post.covariance = kernel_matrix(spec, params, query_h, query_h);
  post.covariance.diagonal().array() += params.noise_variance();
  if (support_h.rows() == 0) {
    post.mean = Vector::Zero(query_h.rows());
    return post;
  }
  Matrix ks = kernel_matrix(spec, params, support_h, support_h);
  ks.diagonal().array() += params.noise_variance();
  const SpdFactor factor = cholesky_decompose(ks);
  const Matrix ksq = kernel_matrix(spec, params, support_h, query_h);
  post.mean = ksq.transpose() * solve_psd(factor, support_y);
  const Matrix v = factor.lower.triangularView<Eigen::Lower>().solve(ksq);
  post.covariance.noalias() -= v.transpose() * v;
  post.covariance = 0.5 * (post.covariance + post.covariance.transpose());
  return post;
}

inline PosteriorPredictive predictive_posterior(const DeepKernelModel& model, const Task& task) {
  require(task.query_size() >= 1, ErrorCode::kInvalidArgument, "posterior needs at least one query point");
  const Matrix x = stack_rows(task.support_x, task.query_x);
  const Matrix h = extract_features(model.extractor, x);
  return posterior_on_features(model.spec, model.kernel, h.topRows(task.support_size()), task.support_y,
                               h.bottomRows(task.query_size()));
}

/// Posterior mean and marginal variance (noise included) only; O(N_S² N_Q) instead of O(N_S N_Q²).
struct PosteriorMarginals {
  Vector mean;
  Vector variance;
};

inline PosteriorMarginals marginals_on_features(const KernelSpec& spec, const KernelParams& params,
                                                const Matrix& support_h, const Vector& support_y,
                                                const Matrix& query_h) {
  PosteriorMarginals out;
  out.variance.resize(query_h.rows());
  for (Eigen::Index i = 0; i < query_h.rows(); ++i)
    out.variance[i] = kernel_matrix(spec, params, query_h.row(i), query_h.row(i))(0, 0) + params.noise_variance();
  if (support_h.rows() == 0) {
    out.mean = Vector::Zero(query_h.rows());
    return out;
  }
  Matrix ks = kernel_matrix(spec, params, support_h, support_h);
  ks.diagonal().array() += params.noise_variance();
  const SpdFactor factor = cholesky_decompose(ks);
  const Matrix ksq = kernel_matrix(spec, params, support_h, query_h);
  out.mean = ksq.transpose() * solve_psd(factor, support_y);
  const Matrix v = factor.lower.triangularView<Eigen::Lower>().solve(ksq);
  out.variance -= v.colwise().squaredNorm().transpose();
  return out;
}

}  // namespace adkf
