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
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "adkf/binary_io.hpp"
#include "adkf/error.hpp"
#include "adkf/feature_extractor.hpp"
#include "adkf/gp.hpp"
#include "adkf/hypergradient.hpp"
#include "adkf/inner_solver.hpp"
#include "adkf/kernels.hpp"
#include "adkf/parallel.hpp"
#include "adkf/random.hpp"
#include "adkf/task_suite.hpp"

namespace adkf {

/// Which parameters are meta-learned (φ, or φ and θ) and which are adapted per task.
enum class Mode { kAdkfIft, kAdkf, kDkt, kDktPlus, kDkl };

inline std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::kAdkfIft: return "ADKF_IFT";
    case Mode::kAdkf: return "ADKF";
    case Mode::kDkt: return "DKT";
    case Mode::kDktPlus: return "DKT_PLUS";
    case Mode::kDkl: return "DKL";
  }
  return "?";
}

inline Mode parse_mode(std::string_view text) {
  for (Mode m : {Mode::kAdkfIft, Mode::kAdkf, Mode::kDkt, Mode::kDktPlus, Mode::kDkl})
    if (text == to_string(m)) return m;
  throw Error(ErrorCode::kInvalidArgument,
              "unknown mode '" + std::string(text) + "' (expected ADKF_IFT, ADKF, DKT, DKT_PLUS or DKL)");
}

/// DKT and DKT_PLUS share one training procedure; they differ only at meta-test.
inline bool trains_kernel_jointly(Mode m) { return m == Mode::kDkt || m == Mode::kDktPlus; }
inline bool uses_inner_solve(Mode m) { return m == Mode::kAdkfIft || m == Mode::kAdkf; }

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::uint64_t step = 0;
  Vector m;
  Vector v;
};

/// One bias-corrected Adam update.
inline std::pair<AdamState, Vector> adam_step(const AdamState& state, const Vector& params, const Vector& grad,
                                              const AdamConfig& cfg) {
  require(params.size() == grad.size(), ErrorCode::kShapeMismatch,
          "adam_step: params have " + std::to_string(params.size()) + " entries but gradient has " +
              std::to_string(grad.size()));
  require(state.step == 0 || (state.m.size() == params.size() && state.v.size() == params.size()),
          ErrorCode::kShapeMismatch, "adam_step: optimizer state does not match the parameter vector");
  AdamState next;
  next.step = state.step + 1;
  const Vector m0 = state.step == 0 ? Vector::Zero(params.size()) : state.m;
  const Vector v0 = state.step == 0 ? Vector::Zero(params.size()) : state.v;
  next.m = cfg.beta1 * m0 + (1.0 - cfg.beta1) * grad;
  next.v = cfg.beta2 * v0 + (1.0 - cfg.beta2) * grad.cwiseAbs2();
  const auto t = static_cast<double>(next.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  const Vector step = cfg.learning_rate * (next.m / c1).array() / ((next.v / c2).array().sqrt() + cfg.eps);
  return {std::move(next), params - step};
}

struct TrainerConfig {
  Mode mode = Mode::kAdkfIft;
  int batch_size = 16;
  AdamConfig adam;
  int max_outer_steps = 2000;
  int eval_every = 50;
  /// Evaluations without improvement before stopping.
  int patience = 10;
  std::uint64_t seed = 0;
  /// Support size of the random splits drawn for training and validation tasks.
  int support_size = 16;
  bool stratified = true;
  bool standardize_labels = true;
  double clip_inf_norm = 1e3;
  /// Abort after this many consecutive batches in which every task was skipped.
  int max_skipped_batches = 10;
  int threads = 1;
  /// Reuse each training task's last θ* as its next inner-solve start.
  bool warm_start = false;
  /// Test hook: L_T sees features of the initial extractor, so it no longer depends on φ.
  bool frozen_train_features = false;
  InnerSolverConfig inner;
  double prior_log_sigma = kDefaultPriorLogSigma;
};

inline void validate(const TrainerConfig& c) {
  require(c.batch_size >= 1, ErrorCode::kInvalidArgument, "batch_size must be at least 1");
  require(c.adam.learning_rate > 0.0, ErrorCode::kInvalidArgument, "learning_rate must be positive");
  require(c.patience >= 1, ErrorCode::kInvalidArgument, "patience must be at least 1");
  require(c.eval_every >= 1, ErrorCode::kInvalidArgument, "eval_every must be at least 1");
  require(c.max_outer_steps >= 0, ErrorCode::kInvalidArgument, "max_outer_steps must be nonnegative");
}

struct LogRow {
  int step = 0;
  double train_loss = std::numeric_limits<double>::quiet_NaN();
  /// NaN on steps without a validation pass.
  double val_objective = std::numeric_limits<double>::quiet_NaN();
  double grad_inf_norm = 0.0;
  int skipped = 0;
  bool clipped = false;
};

struct TrainingLog {
  std::vector<LogRow> rows;
  int best_step = 0;
  double best_val_objective = std::numeric_limits<double>::infinity();
  bool stopped_early = false;
};

struct TrainResult {
  DeepKernelModel best;
  TrainingLog log;
  AdamState optimizer;
  /// Every φ iterate (and θ for DKT) in step order; filled only when requested.
  std::vector<Vector> trajectory;
};

// ---------------------------------------------------------------------------

/// K tasks drawn uniformly with replacement, each with a fresh support/query split.
inline std::vector<Task> sample_task_batch(const std::vector<TaskData>& metadataset, int k, Rng& rng,
                                           const SplitSpec& spec, std::vector<std::size_t>* indices = nullptr) {
  require(!metadataset.empty(), ErrorCode::kEmptyMetadataset, "cannot sample from an empty metadataset");
  std::vector<Task> batch;
  batch.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) {
    const auto idx = static_cast<std::size_t>(rng.below(metadataset.size()));
    if (indices) indices->push_back(idx);
    batch.push_back(split(metadataset[idx], spec, rng));
  }
  return batch;
}

/// The default starting model: a fresh extractor and θ at the median heuristic of
/// the first training task's features (no prior for the jointly trained modes).
inline DeepKernelModel initial_model(const Layout& layout, const KernelSpec& spec, std::uint64_t seed,
                                     const std::vector<TaskData>& train, Mode mode) {
  DeepKernelModel m;
  m.spec = spec;
  m.extractor = init_params(layout, hash64(seed, "extractor"));
  if (!train.empty() && spec.has_lengthscale() && train.front().size() >= 2)
    m.kernel = median_heuristic_init(forward(*m.extractor, train.front().features).output);
  if (trains_kernel_jointly(mode) || mode == Mode::kDkl || !spec.has_lengthscale()) m.kernel.prior.reset();
  return m;
}

namespace detail {

inline KernelParams task_init(const DeepKernelModel& model, const Task& task, double prior_log_sigma,
                              const std::shared_ptr<const ExtractorParams>& frozen) {
  if (!model.spec.has_lengthscale()) return KernelParams{};
  const Matrix h = frozen ? forward(*frozen, task.support_x).output : extract_features(model.extractor, task.support_x);
  return median_heuristic_init(h, prior_log_sigma);
}

inline Vector pack(const DeepKernelModel& m) {
  const Vector theta = to_theta(m.spec, m.kernel);
  const Eigen::Index np = m.extractor ? m.extractor->size() : 0;
  Vector out(np + theta.size());
  if (np) out.head(np) = m.extractor->flat_values;
  out.tail(theta.size()) = theta;
  return out;
}

inline DeepKernelModel unpack(const DeepKernelModel& like, const Vector& flat) {
  DeepKernelModel m = like;
  const Eigen::Index nt = theta_dim(like.spec);
  const Eigen::Index np = flat.size() - nt;
  if (m.extractor) m.extractor->flat_values = flat.head(np);
  Vector theta = flat.tail(nt);
  theta[noise_index(like.spec)] = std::max(theta[noise_index(like.spec)], std::log(kNoiseFloor));
  m.kernel = with_theta(like.spec, like.kernel, theta);
  return m;
}

struct TaskOutcome {
  bool ok = false;
  double loss = 0.0;
  Vector grad;
  std::optional<KernelParams> theta_star;
};

inline bool recoverable(const Error& e) {
  return e.code() == ErrorCode::kUnconvergedInnerSolve || e.code() == ErrorCode::kHessianSingular ||
         e.code() == ErrorCode::kNotPositiveDefinite;
}

}  // namespace detail

/// Objective used for early stopping: mean query L_V on fixed validation splits,
/// with θ adapted per task (ADKF modes) or shared (DKT modes). Failed tasks are left out.
inline double validation_objective(const DeepKernelModel& model, const std::vector<TaskData>& valid,
                                   const TrainerConfig& cfg) {
  if (valid.empty()) return std::numeric_limits<double>::quiet_NaN();
  const SplitSpec spec{cfg.support_size, cfg.stratified, hash64(cfg.seed, "valid_split")};
  const auto losses = parallel_map(valid.size(), cfg.threads, [&](std::size_t i) -> std::optional<double> {
    Rng rng = split_rng(spec, valid[i].task_id, 0);
    const Task task = standardize_task(split(valid[i], spec, rng), cfg.standardize_labels).first;
    try {
      DeepKernelModel m = model;
      if (uses_inner_solve(cfg.mode)) {
        const KernelParams init = detail::task_init(model, task, cfg.prior_log_sigma, nullptr);
        InnerSolverConfig inner = cfg.inner;
        inner.seed = hash64(hash64(cfg.seed, "valid_inner"), i);
        m.kernel = adapt_theta(model.extractor, model.spec, task, init, inner).theta_star;
      }
      return val_loss(m, task).value;
    } catch (const Error& e) {
      if (!detail::recoverable(e)) throw;
      return std::nullopt;
    }
  });
  double sum = 0.0;
  int count = 0;
  for (const auto& l : losses)
    if (l && std::isfinite(*l)) {
      sum += *l;
      ++count;
    }
  return count ? sum / count : std::numeric_limits<double>::infinity();
}

/**
 * The outer loop. ADKF_IFT/ADKF update φ from per-task hypergradients (or
 * direct gradients); DKT/DKT_PLUS update (φ, θ) on whole-task NLML; DKL has
 * nothing to meta-learn and returns model0.
 */
inline TrainResult meta_train(const std::vector<TaskData>& train, const std::vector<TaskData>& valid,
                              const DeepKernelModel& model0, const TrainerConfig& cfg, bool keep_trajectory = false) {
  validate(cfg);
  TrainResult result;
  result.best = model0;
  if (cfg.mode == Mode::kDkl) return result;
  require(!train.empty(), ErrorCode::kEmptyMetadataset, "meta-training needs training tasks");
  require(model0.extractor.has_value(), ErrorCode::kInvalidArgument, "meta-training needs a feature extractor");

  DeepKernelModel current = model0;
  const bool joint = trains_kernel_jointly(cfg.mode);
  if (joint) current.kernel.prior.reset();
  std::shared_ptr<const ExtractorParams> frozen;
  if (cfg.frozen_train_features) frozen = std::make_shared<const ExtractorParams>(*model0.extractor);

  const SplitSpec train_split{cfg.support_size, cfg.stratified, 0};
  Rng batch_rng(hash64(cfg.seed, "batch"));
  std::map<std::size_t, KernelParams> warm;
  int bad_evals = 0;
  int empty_batches = 0;

  auto evaluate = [&](int step, LogRow& row) {
    if (valid.empty()) return;
    row.val_objective = validation_objective(current, valid, cfg);
    if (row.val_objective < result.log.best_val_objective) {
      result.log.best_val_objective = row.val_objective;
      result.log.best_step = step;
      result.best = current;
      bad_evals = 0;
    } else {
      ++bad_evals;
    }
  };

  {
    LogRow row;
    row.step = 0;
    evaluate(0, row);
    result.log.rows.push_back(row);
  }
  if (keep_trajectory) result.trajectory.push_back(joint ? detail::pack(current) : current.extractor->flat_values);

  for (int step = 1; step <= cfg.max_outer_steps; ++step) {
    std::vector<std::size_t> indices;
    Rng step_rng = batch_rng.fork(static_cast<std::uint64_t>(step));
    const std::vector<Task> batch = sample_task_batch(train, cfg.batch_size, step_rng, train_split, &indices);

    const auto outcomes = parallel_map(batch.size(), cfg.threads, [&](std::size_t i) {
      detail::TaskOutcome out;
      const Task task = standardize_task(batch[i], cfg.standardize_labels).first;
      try {
        if (joint) {
          const LossResult l = whole_task_nlml(current, task, {.theta = true, .phi = true});
          out.loss = l.value;
          out.grad.resize(l.grad_phi.size() + l.grad_theta.size());
          out.grad << l.grad_phi, l.grad_theta;
        } else {
          HypergradientConfig hc;
          hc.inner = cfg.inner;
          hc.inner.seed = hash64(hash64(cfg.seed, "inner"), static_cast<std::uint64_t>(step) * 1000003u + i);
          hc.inner.hooks.frozen_train_extractor = frozen;
          hc.prior_log_sigma = cfg.prior_log_sigma;
          hc.direct_gradient_only = cfg.mode == Mode::kAdkf;
          if (cfg.warm_start) {
            if (const auto it = warm.find(indices[i]); it != warm.end()) {
              KernelParams init = detail::task_init(current, task, cfg.prior_log_sigma, frozen);
              const auto prior = init.prior;
              init = it->second;
              init.prior = prior;
              hc.init_override = init;
            }
          }
          const HypergradientReport r = compute_hypergradient(current.extractor, current.spec, task, hc);
          out.loss = r.inner.final_loss;
          out.grad = r.hypergradient;
          out.theta_star = r.inner.theta_star;
        }
        out.ok = std::isfinite(out.loss) && out.grad.allFinite();
      } catch (const Error& e) {
        if (!detail::recoverable(e)) throw;
        out.ok = false;
      }
      return out;
    });

    LogRow row;
    row.step = step;
    Vector grad;
    double loss_sum = 0.0;
    int used = 0;
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
      const auto& o = outcomes[i];
      if (!o.ok) {
        ++row.skipped;
        continue;
      }
      if (used == 0) grad = Vector::Zero(o.grad.size());
      grad += o.grad;
      loss_sum += o.loss;
      ++used;
      if (cfg.warm_start && o.theta_star) warm[indices[i]] = *o.theta_star;
    }
    if (used == 0) {
      result.log.rows.push_back(row);
      require(++empty_batches < cfg.max_skipped_batches, ErrorCode::kUnconvergedInnerSolve,
              "every task in " + std::to_string(cfg.max_skipped_batches) + " consecutive batches was skipped");
      continue;
    }
    empty_batches = 0;
    grad /= static_cast<double>(used);
    row.train_loss = loss_sum / used;
    row.grad_inf_norm = grad.lpNorm<Eigen::Infinity>();
    if (row.grad_inf_norm > cfg.clip_inf_norm) {
      grad *= cfg.clip_inf_norm / row.grad_inf_norm;
      row.clipped = true;
    }

    if (joint) {
      auto [state, flat] = adam_step(result.optimizer, detail::pack(current), grad, cfg.adam);
      result.optimizer = std::move(state);
      current = detail::unpack(current, flat);
    } else {
      auto [state, flat] = adam_step(result.optimizer, current.extractor->flat_values, grad, cfg.adam);
      result.optimizer = std::move(state);
      current.extractor->flat_values = std::move(flat);
    }
    if (keep_trajectory) result.trajectory.push_back(joint ? detail::pack(current) : current.extractor->flat_values);

    if (step % cfg.eval_every == 0 || step == cfg.max_outer_steps) evaluate(step, row);
    result.log.rows.push_back(row);
    if (!valid.empty() && bad_evals >= cfg.patience) {
      result.log.stopped_early = true;
      break;
    }
  }
  if (valid.empty()) {
    result.best = current;
    result.log.best_step = result.log.rows.back().step;
  }
  return result;
}

// ---------------------------------------------------------------------------
// DKL: fit θ and φ on one task's support set, nothing meta-learned.

struct DklConfig {
  double learning_rate = 1e-3;
  int epochs = 50;
};

struct DklFit {
  DeepKernelModel model;
  /// Support NLML before each epoch's update, then after the last one (epochs + 1 values).
  std::vector<double> losses;
};

inline DklFit fit_dkl(const DeepKernelModel& model0, const Task& task, const DklConfig& cfg) {
  DklFit fit;
  DeepKernelModel m = model0;
  if (m.spec.has_lengthscale()) m.kernel = median_heuristic_init(extract_features(m.extractor, task.support_x));
  m.kernel.prior.reset();
  AdamState state;
  const AdamConfig adam{cfg.learning_rate, 0.9, 0.999, 1e-8};
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const LossResult l = train_loss(m, task, {.theta = true, .phi = true});
    fit.losses.push_back(l.value);
    Vector g(l.grad_phi.size() + l.grad_theta.size());
    g << l.grad_phi, l.grad_theta;
    auto [next, flat] = adam_step(state, detail::pack(m), g, adam);
    state = std::move(next);
    m = detail::unpack(m, flat);
  }
  fit.losses.push_back(train_loss(m, task).value);
  fit.model = std::move(m);
  return fit;
}

// ---------------------------------------------------------------------------
// Checkpoints and the training log.

inline constexpr std::array<char, 8> kCheckpointMagic = {'A', 'D', 'K', 'F', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

struct Checkpoint {
  Mode mode = Mode::kAdkfIft;
  DeepKernelModel model;
  AdamState optimizer;
  std::int64_t best_step = 0;
  std::uint64_t config_hash = 0;
};

namespace detail {

inline void write_vector(std::ostream& out, const Vector& v) {
  binary::write_u64(out, static_cast<std::uint64_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) binary::write_f64(out, v[i]);
}

inline Vector read_vector(std::istream& in) {
  const auto n = binary::read_u64(in);
  require(n < (1ULL << 32), ErrorCode::kMalformedRecord, "implausible vector length in checkpoint");
  Vector v(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = binary::read_f64(in);
  return v;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& out, const Checkpoint& c) {
  binary::write_magic(out, kCheckpointMagic);
  binary::write_u32(out, kCheckpointFormatVersion);
  binary::write_u64(out, c.config_hash);
  binary::write_u32(out, static_cast<std::uint32_t>(c.mode));
  binary::write_u32(out, static_cast<std::uint32_t>(c.model.spec.family));
  binary::write_u32(out, static_cast<std::uint32_t>(c.model.spec.input_kind));
  const KernelParams& k = c.model.kernel;
  binary::write_f64(out, k.log_lengthscale);
  binary::write_f64(out, k.log_signal_amp);
  binary::write_f64(out, k.log_noise_std);
  binary::write_u32(out, k.prior ? 1U : 0U);
  binary::write_f64(out, k.prior ? k.prior->log_mu : 0.0);
  binary::write_f64(out, k.prior ? k.prior->log_sigma : 0.0);
  binary::write_u64(out, static_cast<std::uint64_t>(c.best_step));
  binary::write_u64(out, c.optimizer.step);
  detail::write_vector(out, c.optimizer.m);
  detail::write_vector(out, c.optimizer.v);
  binary::write_u32(out, c.model.extractor ? 1U : 0U);
  if (c.model.extractor) write_extractor(out, *c.model.extractor);
}

inline Checkpoint read_checkpoint(std::istream& in) {
  binary::expect_magic(in, kCheckpointMagic);
  const auto version = binary::read_u32(in);
  require(version == kCheckpointFormatVersion, ErrorCode::kVersionMismatch,
          "checkpoint format version " + std::to_string(version) + " is not supported");
  Checkpoint c;
  c.config_hash = binary::read_u64(in);
  const auto mode = binary::read_u32(in);
  require(mode <= static_cast<std::uint32_t>(Mode::kDkl), ErrorCode::kMalformedRecord, "bad mode in checkpoint");
  c.mode = static_cast<Mode>(mode);
  const auto family = binary::read_u32(in);
  const auto input_kind = binary::read_u32(in);
  require(family <= 1 && input_kind <= 1, ErrorCode::kMalformedRecord, "bad kernel spec in checkpoint");
  c.model.spec = KernelSpec{static_cast<KernelFamily>(family), static_cast<InputKind>(input_kind)};
  KernelParams& k = c.model.kernel;
  k.log_lengthscale = binary::read_f64(in);
  k.log_signal_amp = binary::read_f64(in);
  k.log_noise_std = binary::read_f64(in);
  const bool has_prior = binary::read_u32(in) != 0;
  const double mu = binary::read_f64(in);
  const double sigma = binary::read_f64(in);
  if (has_prior) k.prior = LengthscalePrior{mu, sigma};
  c.best_step = static_cast<std::int64_t>(binary::read_u64(in));
  c.optimizer.step = binary::read_u64(in);
  c.optimizer.m = detail::read_vector(in);
  c.optimizer.v = detail::read_vector(in);
  if (binary::read_u32(in) != 0) c.model.extractor = read_extractor(in);
  return c;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot open " + path + " for writing");
  write_checkpoint(out, c);
  require(static_cast<bool>(out), ErrorCode::kIo, "write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open checkpoint " + path);
  return read_checkpoint(in);
}

namespace detail {

inline std::string csv_number(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

}  // namespace detail

/// Per-step CSV; validation cells are empty on steps without a validation pass.
inline void write_training_log(std::ostream& out, const TrainingLog& log) {
  out << "step,train_loss,val_objective,grad_inf_norm,skipped_tasks,clipped\n";
  for (const auto& r : log.rows)
    out << r.step << ',' << detail::csv_number(r.train_loss) << ',' << detail::csv_number(r.val_objective) << ','
        << detail::csv_number(r.grad_inf_norm) << ',' << r.skipped << ',' << (r.clipped ? 1 : 0) << '\n';
}

}  // namespace adkf
