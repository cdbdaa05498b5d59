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

// Pool-based Bayesian optimisation on a fixed feature representation.
// Maximisation throughout.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <ostream>
#include <string>
#include <vector>

#include "adkf/error.hpp"
#include "adkf/evaluation.hpp"
#include "adkf/gp.hpp"
#include "adkf/inner_solver.hpp"
#include "adkf/kernels.hpp"
#include "adkf/random.hpp"

namespace adkf {

inline double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

/// EI for maximisation; reduces to max(μ − f*, 0) when s = 0.
inline double expected_improvement(double mean, double std, double best_observed) {
  require(std >= 0.0, ErrorCode::kNegativeStd, "expected_improvement: negative standard deviation");
  const double gain = mean - best_observed;
  if (std == 0.0) return std::max(gain, 0.0);
  const double z = gain / std;
  return std::max(0.0, gain * detail::normal_cdf(z) + std * normal_pdf(z));
}

struct BoConfig {
  int init_count = 16;
  int budget = 50;
  /// Initial points are drawn from this fraction of the pool with the lowest values.
  double worst_fraction = 0.3;
  bool random_acquisition = false;
  bool standardize_labels = true;
  InnerSolverConfig inner;
  double prior_log_sigma = kDefaultPriorLogSigma;
};

struct BoStep {
  Eigen::Index chosen = 0;
  double observed = 0.0;
  double best_so_far = 0.0;
};

struct BoRun {
  std::string representation;
  std::uint64_t seed = 0;
  std::vector<Eigen::Index> init_indices;
  double initial_best = 0.0;
  std::vector<BoStep> trajectory;
};

/// Indices of the pool ordered by ascending value, ties by index.
inline std::vector<Eigen::Index> ascending_order(const Vector& values) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(values.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return values[a] < values[b]; });
  return order;
}

/**
 * One BO run over a finite pool. Each iteration refits θ from the median
 * heuristic on everything observed so far, scores the rest of the pool by EI
 * on the latent posterior, and observes the argmax (lowest index on ties).
 */
inline BoRun bo_run(const Matrix& features, const Vector& values, const KernelSpec& spec, const BoConfig& cfg,
                    std::uint64_t seed, std::string representation = "") {
  const Eigen::Index n = values.size();
  require(features.rows() == n, ErrorCode::kDimensionMismatch, "pool features and values differ in length");
  require(cfg.init_count >= 2, ErrorCode::kInvalidArgument, "init_count must be at least 2");
  require(cfg.budget >= 0, ErrorCode::kInvalidArgument, "budget must be nonnegative");
  require(static_cast<Eigen::Index>(cfg.init_count) + cfg.budget <= n, ErrorCode::kBudgetExceedsPool,
          "init_count + budget = " + std::to_string(cfg.init_count + cfg.budget) + " exceeds pool size " +
              std::to_string(n));
  BoRun run;
  run.representation = std::move(representation);
  run.seed = seed;
  Rng rng(hash64(seed, "bo"));

  const std::vector<Eigen::Index> order = ascending_order(values);
  const auto worst = std::max<Eigen::Index>(
      cfg.init_count, static_cast<Eigen::Index>(std::ceil(cfg.worst_fraction * static_cast<double>(n))));
  std::vector<Eigen::Index> candidates(order.begin(), order.begin() + std::min(worst, n));
  rng.shuffle(candidates);
  run.init_indices.assign(candidates.begin(), candidates.begin() + cfg.init_count);

  std::vector<bool> seen(static_cast<std::size_t>(n), false);
  std::vector<Eigen::Index> observed = run.init_indices;
  double best = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i : observed) {
    seen[static_cast<std::size_t>(i)] = true;
    best = std::max(best, values[i]);
  }
  run.initial_best = best;

  for (int it = 0; it < cfg.budget; ++it) {
    std::vector<Eigen::Index> rest;
    for (Eigen::Index i = 0; i < n; ++i)
      if (!seen[static_cast<std::size_t>(i)]) rest.push_back(i);

    Eigen::Index choice = rest.front();
    if (cfg.random_acquisition) {
      choice = rest[static_cast<std::size_t>(rng.below(rest.size()))];
    } else {
      Task task;
      task.support_x = features(observed, Eigen::all);
      task.support_y = values(observed);
      const auto [std_task, scaling] = standardize_task(task, cfg.standardize_labels);
      const KernelParams init =
          spec.has_lengthscale() ? median_heuristic_init(task.support_x, cfg.prior_log_sigma) : KernelParams{};
      InnerSolverConfig inner = cfg.inner;
      inner.seed = hash64(hash64(seed, "bo_inner"), static_cast<std::uint64_t>(it));
      const KernelParams theta = adapt_theta(std::nullopt, spec, std_task, init, inner).theta_star;
      const Matrix rest_x = features(rest, Eigen::all);
      const PosteriorMarginals post = marginals_on_features(spec, theta, task.support_x, std_task.support_y, rest_x);
      const double incumbent = std_task.support_y.maxCoeff();
      double best_ei = -1.0;
      for (std::size_t k = 0; k < rest.size(); ++k) {
        const auto kk = static_cast<Eigen::Index>(k);
        // Latent variance: the observation noise is not part of the improvement.
        const double var = std::max(0.0, post.variance[kk] - theta.noise_variance());
        const double ei = expected_improvement(post.mean[kk], std::sqrt(var), incumbent);
        if (ei > best_ei) {
          best_ei = ei;
          choice = rest[k];
        }
      }
    }
    seen[static_cast<std::size_t>(choice)] = true;
    observed.push_back(choice);
    best = std::max(best, values[choice]);
    run.trajectory.push_back({choice, values[choice], best});
  }
  return run;
}

/// Best-so-far after `iterations` acquisitions (0 = after initialisation).
inline double best_after(const BoRun& run, int iterations) {
  if (iterations <= 0 || run.trajectory.empty()) return run.initial_best;
  const auto k = std::min<std::size_t>(static_cast<std::size_t>(iterations), run.trajectory.size());
  return run.trajectory[k - 1].best_so_far;
}

inline void write_bo_trajectories(std::ostream& out, const std::vector<BoRun>& runs) {
  out << "representation,seed,iteration,chosen_index,observed,best_so_far\n";
  for (const auto& r : runs) {
    out << r.representation << ',' << r.seed << ",0,," << detail::csv_number(r.initial_best) << ','
        << detail::csv_number(r.initial_best) << '\n';
    for (std::size_t i = 0; i < r.trajectory.size(); ++i)
      out << r.representation << ',' << r.seed << ',' << i + 1 << ',' << r.trajectory[i].chosen << ','
          << detail::csv_number(r.trajectory[i].observed) << ',' << detail::csv_number(r.trajectory[i].best_so_far)
          << '\n';
  }
}

// ---------------------------------------------------------------------------
// Predictive NLL of a representation on random support/query splits of a pool.

struct Representation {
  std::string name;
  Matrix features;  // one row per pool point
};

struct Pool {
  std::string name;
  Vector values;
  std::vector<Representation> representations;
};

struct NllCell {
  std::string pool;
  std::string representation;
  int support_size = 0;  // 0 marks the row pooling every support size
  Aggregate nll;
};

/// Query NLL per query point (L_V / N_Q, original label scale) with θ fit on the support.
inline double split_nll(const Matrix& features, const Vector& values, const KernelSpec& spec, int support_size,
                        Rng& rng, const BoConfig& cfg) {
  TaskData data;
  data.features = features;
  data.labels = values;
  const Task raw = split(data, SplitSpec{support_size, false, 0}, rng);
  const auto [task, scaling] = standardize_task(raw, cfg.standardize_labels);
  const KernelParams init =
      spec.has_lengthscale() ? median_heuristic_init(task.support_x, cfg.prior_log_sigma) : KernelParams{};
  const KernelParams theta = adapt_theta(std::nullopt, spec, task, init, cfg.inner).theta_star;
  const DeepKernelModel m{std::nullopt, theta, spec};
  const double lv = val_loss(m, task).value;
  const auto nq = static_cast<double>(task.query_size());
  return (lv + nq * std::log(scaling.std)) / nq;
}

inline std::vector<NllCell> predictive_nll_table(const std::vector<Pool>& pools, const KernelSpec& spec,
                                                 const std::vector<int>& support_sizes, int num_splits,
                                                 const BoConfig& cfg, std::uint64_t seed, int threads = 1) {
  struct Job {
    std::size_t pool, rep, size;
    int split;
  };
  std::vector<Job> jobs;
  for (std::size_t p = 0; p < pools.size(); ++p)
    for (std::size_t r = 0; r < pools[p].representations.size(); ++r)
      for (std::size_t s = 0; s < support_sizes.size(); ++s)
        for (int k = 0; k < num_splits; ++k) jobs.push_back({p, r, s, k});

  // The split stream ignores the representation, so every representation sees the same partitions.
  const auto values = parallel_map(jobs.size(), threads, [&](std::size_t j) {
    const Job& job = jobs[j];
    const Pool& pool = pools[job.pool];
    Rng rng = Rng(hash64(hash64(seed, pool.name), static_cast<std::uint64_t>(support_sizes[job.size])))
                  .fork(static_cast<std::uint64_t>(job.split));
    try {
      return split_nll(pool.representations[job.rep].features, pool.values, spec, support_sizes[job.size], rng, cfg);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNotPositiveDefinite) throw;
      return std::numeric_limits<double>::quiet_NaN();
    }
  });

  std::vector<NllCell> cells;
  std::size_t j = 0;
  for (std::size_t p = 0; p < pools.size(); ++p) {
    for (std::size_t r = 0; r < pools[p].representations.size(); ++r) {
      std::vector<double> all;
      for (std::size_t s = 0; s < support_sizes.size(); ++s) {
        std::vector<double> cell;
        for (int k = 0; k < num_splits; ++k, ++j)
          if (std::isfinite(values[j])) cell.push_back(values[j]);
        all.insert(all.end(), cell.begin(), cell.end());
        cells.push_back({pools[p].name, pools[p].representations[r].name, support_sizes[s], aggregate("nll", cell)});
      }
      cells.push_back({pools[p].name, pools[p].representations[r].name, 0, aggregate("nll", all)});
    }
  }
  return cells;
}

inline void write_nll_table(std::ostream& out, const std::vector<NllCell>& cells) {
  out << "pool,representation,support_size,mean_nll,stderr,count\n";
  for (const auto& c : cells)
    out << c.pool << ',' << c.representation << ',' << (c.support_size ? std::to_string(c.support_size) : "all") << ','
        << detail::csv_number(c.nll.mean) << ',' << detail::csv_number(c.nll.stderr_) << ',' << c.nll.count << '\n';
}

}  // namespace adkf
