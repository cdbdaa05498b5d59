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
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "adkf/error.hpp"
#include "adkf/gp.hpp"
#include "adkf/inner_solver.hpp"
#include "adkf/meta_trainer.hpp"
#include "adkf/parallel.hpp"
#include "adkf/task_suite.hpp"

namespace adkf {

// ---------------------------------------------------------------------------
// Metrics.

/**
 * Average precision minus the positive fraction. Points are ranked by
 * descending score; equal scores keep ascending index order, so the result is
 * deterministic but depends on index order within a tie.
 */
inline double delta_auprc(const Vector& scores, const Vector& labels) {
  require(scores.size() == labels.size(), ErrorCode::kDimensionMismatch, "scores and labels differ in length");
  const Eigen::Index n = scores.size();
  Eigen::Index positives = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    require(labels[i] == 1.0 || labels[i] == -1.0, ErrorCode::kInvalidArgument, "labels must be +1 or -1");
    positives += labels[i] > 0 ? 1 : 0;
  }
  require(positives > 0 && positives < n, ErrorCode::kSingleClassQuery, "query needs both classes for AUPRC");
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return scores[a] > scores[b]; });
  double ap = 0.0;
  Eigen::Index hits = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (labels[order[k]] > 0) {
      ++hits;
      ap += static_cast<double>(hits) / static_cast<double>(k + 1);
    }
  }
  const auto p = static_cast<double>(positives);
  return ap / p - p / static_cast<double>(n);
}

/// 1 − Σ(y − g)² / Σ(y − ȳ_S)², with the denominator centred on the support mean.
inline double r2_os(const Vector& predictions, const Vector& query_labels, double support_label_mean) {
  require(predictions.size() == query_labels.size(), ErrorCode::kDimensionMismatch,
          "predictions and labels differ in length");
  const double den = (query_labels.array() - support_label_mean).square().sum();
  require(den > 0.0, ErrorCode::kZeroDenominator, "every query label equals the support mean");
  return 1.0 - (query_labels - predictions).squaredNorm() / den;
}

struct WilcoxonResult {
  double statistic = 0.0;  // min(W+, W-)
  double p_value = 1.0;
  int n = 0;               // nonzero differences
  bool exact = false;
};

namespace detail {

/// Average ranks of |d| (1-based), ties sharing the mean of their positions.
inline std::vector<double> average_ranks(const std::vector<double>& magnitudes) {
  const std::size_t n = magnitudes.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return magnitudes[a] < magnitudes[b]; });
  std::vector<double> ranks(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && magnitudes[order[j + 1]] == magnitudes[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace detail

inline constexpr int kWilcoxonExactMaxN = 20;

/**
 * Two-sided signed-rank test. Zero differences are dropped. For n <= 20 the
 * null distribution of W+ is counted over all 2^n sign assignments (by dynamic
 * programming over doubled ranks, which handles half-integer tied ranks); for
 * larger n a normal approximation with tie-corrected variance and a 0.5
 * continuity correction is used.
 */
inline WilcoxonResult wilcoxon_signed_rank_two_sided(const std::vector<double>& differences) {
  std::vector<double> d;
  for (double x : differences)
    if (x != 0.0) d.push_back(x);
  require(d.size() >= 5, ErrorCode::kTooFewNonZero,
          "signed-rank test needs at least 5 nonzero differences, got " + std::to_string(d.size()));
  std::vector<double> mags(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) mags[i] = std::abs(d[i]);
  const std::vector<double> ranks = detail::average_ranks(mags);
  const auto n = static_cast<int>(d.size());
  double w_plus = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d[i] > 0) w_plus += ranks[i];
  const double total = 0.5 * n * (n + 1);
  WilcoxonResult res;
  res.n = n;
  res.statistic = std::min(w_plus, total - w_plus);

  if (n <= kWilcoxonExactMaxN) {
    res.exact = true;
    // Counts of each achievable 2·W+ value.
    std::vector<int> doubled(d.size());
    int max_sum = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      doubled[i] = static_cast<int>(std::lround(2.0 * ranks[i]));
      max_sum += doubled[i];
    }
    std::vector<double> counts(static_cast<std::size_t>(max_sum) + 1, 0.0);
    counts[0] = 1.0;
    for (int r : doubled)
      for (int s = max_sum; s >= r; --s) counts[static_cast<std::size_t>(s)] += counts[static_cast<std::size_t>(s - r)];
    const auto w2 = static_cast<int>(std::lround(2.0 * res.statistic));
    double extreme = 0.0;
    for (int s = 0; s <= max_sum; ++s)
      if (std::min(s, max_sum - s) <= w2) extreme += counts[static_cast<std::size_t>(s)];
    res.p_value = std::min(1.0, extreme / std::ldexp(1.0, n));
    return res;
  }

  double tie_term = 0.0;
  {
    std::vector<double> sorted = ranks;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size();) {
      std::size_t j = i;
      while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) ++j;
      const auto t = static_cast<double>(j - i + 1);
      tie_term += t * t * t - t;
      i = j + 1;
    }
  }
  const double mean = 0.25 * n * (n + 1);
  const double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
  if (var <= 0.0) return res;
  const double z = std::min(0.0, res.statistic - mean + 0.5) / std::sqrt(var);
  res.p_value = std::min(1.0, 2.0 * detail::normal_cdf(z));
  return res;
}

// ---------------------------------------------------------------------------
// Meta-testing.

struct EvalConfig {
  int threads = 1;
  bool standardize_labels = true;
  InnerSolverConfig inner;
  double prior_log_sigma = kDefaultPriorLogSigma;
  /// DKT_PLUS re-adapts θ per task; false makes it evaluate exactly like DKT.
  bool adapt_theta = true;
  DklConfig dkl;
  std::uint64_t seed = 0;
};

struct EvalRecord {
  std::string task_id;
  int split_index = 0;
  TaskKind kind = TaskKind::kRegression;
  bool ok = false;
  std::string note;
  /// L_V on the original label scale.
  double nll = std::numeric_limits<double>::quiet_NaN();
  /// r2_os for regression, delta_auprc for classification.
  double metric = std::numeric_limits<double>::quiet_NaN();
};

inline std::string_view metric_name(TaskKind kind) {
  return kind == TaskKind::kRegression ? "r2_os" : "delta_auprc";
}

struct Aggregate {
  std::string metric;
  double mean = std::numeric_limits<double>::quiet_NaN();
  double stderr_ = std::numeric_limits<double>::quiet_NaN();
  int count = 0;
};

struct EvalReport {
  std::string method;
  int support_size = 0;
  std::vector<EvalRecord> records;
  std::vector<Aggregate> aggregates;
  int failed = 0;
};

inline Aggregate aggregate(std::string metric, const std::vector<double>& values) {
  Aggregate a;
  a.metric = std::move(metric);
  a.count = static_cast<int>(values.size());
  if (values.empty()) return a;
  double sum = 0.0;
  for (double v : values) sum += v;
  a.mean = sum / a.count;
  if (a.count > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - a.mean) * (v - a.mean);
    a.stderr_ = std::sqrt(ss / (a.count - 1)) / std::sqrt(static_cast<double>(a.count));
  }
  return a;
}

/// Model used to predict the query set of one split, per the mode's adaptation rule.
inline DeepKernelModel adapt_for_task(const DeepKernelModel& model, Mode mode, const Task& task, const EvalConfig& cfg,
                                      std::uint64_t inner_seed, bool* converged = nullptr) {
  if (converged) *converged = true;
  InnerSolverConfig inner = cfg.inner;
  inner.seed = inner_seed;
  auto heuristic = [&] {
    return model.spec.has_lengthscale()
               ? median_heuristic_init(extract_features(model.extractor, task.support_x), cfg.prior_log_sigma)
               : KernelParams{};
  };
  DeepKernelModel m = model;
  switch (mode) {
    case Mode::kDkt:
      return m;
    case Mode::kDktPlus: {
      if (!cfg.adapt_theta) return m;
      KernelParams init = m.kernel;
      init.prior = heuristic().prior;
      const InnerSolveResult r = adapt_theta(m.extractor, m.spec, task, init, inner);
      if (converged) *converged = r.converged;
      m.kernel = r.theta_star;
      return m;
    }
    case Mode::kAdkfIft:
    case Mode::kAdkf: {
      const InnerSolveResult r = adapt_theta(m.extractor, m.spec, task, heuristic(), inner);
      if (converged) *converged = r.converged;
      m.kernel = r.theta_star;
      return m;
    }
    case Mode::kDkl:
      return fit_dkl(model, task, cfg.dkl).model;
  }
  return m;
}

/// One record per (task, split); splits come from split_rng so every method sees the same partitions.
inline EvalReport meta_test(const DeepKernelModel& model, Mode mode, const std::vector<TaskData>& tasks,
                            const SplitSpec& split_spec, int num_splits, const EvalConfig& cfg) {
  EvalReport report;
  report.method = std::string(to_string(mode));
  report.support_size = split_spec.support_size;
  const std::size_t total = tasks.size() * static_cast<std::size_t>(std::max(num_splits, 0));
  report.records = parallel_map(total, cfg.threads, [&](std::size_t job) {
    const std::size_t ti = job / static_cast<std::size_t>(num_splits);
    const auto si = static_cast<int>(job % static_cast<std::size_t>(num_splits));
    const TaskData& data = tasks[ti];
    EvalRecord rec;
    rec.task_id = data.task_id;
    rec.split_index = si;
    rec.kind = data.kind;
    try {
      Rng rng = split_rng(split_spec, data.task_id, static_cast<std::uint64_t>(si));
      const Task raw = split(data, split_spec, rng);
      const auto [task, scaling] = standardize_task(raw, cfg.standardize_labels);
      bool converged = true;
      const DeepKernelModel m =
          adapt_for_task(model, mode, task, cfg, hash64(hash64(cfg.seed, "test_inner"), job), &converged);
      if (!converged) {
        rec.note = "inner solve did not converge";
        return rec;
      }
      const PosteriorPredictive post = predictive_posterior(m, task);
      const Vector r = task.query_y - post.mean;
      const SpdFactor f = cholesky_decompose(post.covariance);
      const double lv = 0.5 * r.dot(solve_psd(f, r)) + 0.5 * log_det(f) +
                        static_cast<double>(r.size()) * kHalfLog2Pi;
      rec.nll = lv + static_cast<double>(r.size()) * std::log(scaling.std);
      if (data.kind == TaskKind::kRegression) {
        Vector pred(post.mean.size());
        for (Eigen::Index i = 0; i < pred.size(); ++i) pred[i] = scaling.to_raw(post.mean[i]);
        rec.metric = r2_os(pred, raw.query_y, raw.support_y.mean());
      } else {
        rec.metric = delta_auprc(post.mean, raw.query_y);
      }
      rec.ok = std::isfinite(rec.nll) && std::isfinite(rec.metric);
      if (!rec.ok) rec.note = "non-finite result";
    } catch (const Error& e) {
      switch (e.code()) {
        case ErrorCode::kNotPositiveDefinite:
        case ErrorCode::kZeroDenominator:
        case ErrorCode::kSingleClassQuery:
        case ErrorCode::kInfeasibleStratification:
          rec.note = e.what();
          break;
        default:
          throw;
      }
    }
    return rec;
  });

  std::vector<double> nll, metric;
  std::string name = "r2_os";
  for (const auto& r : report.records) {
    if (!r.ok) {
      ++report.failed;
      continue;
    }
    nll.push_back(r.nll);
    metric.push_back(r.metric);
    name = std::string(metric_name(r.kind));
  }
  report.aggregates.push_back(aggregate("nll", nll));
  report.aggregates.push_back(aggregate(name, metric));
  return report;
}

inline const Aggregate& find_aggregate(const EvalReport& report, std::string_view metric) {
  for (const auto& a : report.aggregates)
    if (a.metric == metric) return a;
  throw Error(ErrorCode::kInvalidArgument, "report has no aggregate for metric '" + std::string(metric) + "'");
}

/// Per-task mean of a metric over the successful splits, in first-appearance task order.
inline std::vector<std::pair<std::string, double>> per_task_means(const EvalReport& report, bool use_nll) {
  std::vector<std::pair<std::string, double>> out;
  std::vector<int> counts;
  for (const auto& r : report.records) {
    if (!r.ok) continue;
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& p) { return p.first == r.task_id; });
    if (it == out.end()) {
      out.emplace_back(r.task_id, 0.0);
      counts.push_back(0);
      it = out.end() - 1;
    }
    const auto k = static_cast<std::size_t>(it - out.begin());
    it->second += use_nll ? r.nll : r.metric;
    ++counts[k];
  }
  for (std::size_t k = 0; k < out.size(); ++k) out[k].second /= counts[k];
  return out;
}

/// Paired per-task differences a − b over tasks present in both reports, in a's order.
inline std::vector<double> paired_differences(const EvalReport& a, const EvalReport& b, bool use_nll) {
  const auto ma = per_task_means(a, use_nll);
  const auto mb = per_task_means(b, use_nll);
  std::vector<double> d;
  for (const auto& [id, va] : ma) {
    const auto it = std::find_if(mb.begin(), mb.end(), [&](const auto& p) { return p.first == id; });
    if (it != mb.end()) d.push_back(va - it->second);
  }
  return d;
}

inline void write_eval_records(std::ostream& out, const EvalReport& r) {
  out << "method,task_id,split,metric,value\n";
  for (const auto& rec : r.records) {
    if (!rec.ok) {
      out << r.method << ',' << rec.task_id << ',' << rec.split_index << ",failed,\n";
      continue;
    }
    out << r.method << ',' << rec.task_id << ',' << rec.split_index << ",nll," << detail::csv_number(rec.nll) << '\n';
    out << r.method << ',' << rec.task_id << ',' << rec.split_index << ',' << metric_name(rec.kind) << ','
        << detail::csv_number(rec.metric) << '\n';
  }
}

inline void write_eval_aggregates(std::ostream& out, const std::vector<EvalReport>& reports) {
  out << "method,support_size,metric,mean,stderr,count,failed\n";
  for (const auto& r : reports)
    for (const auto& a : r.aggregates)
      out << r.method << ',' << r.support_size << ',' << a.metric << ',' << detail::csv_number(a.mean) << ','
          << detail::csv_number(a.stderr_) << ',' << a.count << ',' << r.failed << '\n';
}

}  // namespace adkf
