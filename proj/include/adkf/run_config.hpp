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

// Run configuration: flat `key = value` lines with dotted section prefixes.
//
//   # comment
//   trainer.mode = ADKF_IFT
//   generator.noise_std_range = 0.02, 0.5
//
// Every key has a default (see RunConfig). Unknown keys, repeated keys and
// values that do not parse are errors that name the line and key.

#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "adkf/bayes_opt.hpp"
#include "adkf/error.hpp"
#include "adkf/evaluation.hpp"
#include "adkf/kernels.hpp"
#include "adkf/meta_trainer.hpp"
#include "adkf/random.hpp"
#include "adkf/task_suite.hpp"

namespace adkf {

struct RunConfig {
  std::uint64_t seed = 0;
  int threads = 1;

  // generator.*; train/valid/test sets share one warp and differ in their task streams.
  GeneratorConfig generator;
  int num_train_tasks = 64;
  int num_valid_tasks = 16;
  int num_test_tasks = 32;

  // model.*
  int hidden_width = 32;
  int feature_dim = 8;
  KernelFamily kernel = KernelFamily::kMatern52;

  TrainerConfig trainer;
  EvalConfig eval;
  int eval_support_size = 16;
  int eval_num_splits = 10;
  bool eval_stratified = true;

  // bo.*
  BoConfig bo;
  int bo_pool_size = 512;
  int bo_num_pools = 2;
  int bo_num_seeds = 20;
  std::vector<int> bo_nll_support_sizes = {32, 64};
  int bo_nll_splits = 100;

  // paths.*
  std::string tasks_dir = "tasks";
  std::string checkpoint;
};

/// Sub-seeds: hash64(global seed, component name).
inline std::uint64_t sub_seed(const RunConfig& c, std::string_view component) { return hash64(c.seed, component); }

/// Propagates the global seed, thread count and shared knobs into the component configs.
inline void resolve(RunConfig& c) {
  c.trainer.seed = sub_seed(c, "trainer");
  c.trainer.threads = c.threads;
  c.eval.threads = c.threads;
  c.eval.seed = sub_seed(c, "eval");
  c.eval.inner = c.trainer.inner;
  c.eval.prior_log_sigma = c.trainer.prior_log_sigma;
  c.eval.standardize_labels = c.trainer.standardize_labels;
  c.bo.inner = c.trainer.inner;
  c.bo.prior_log_sigma = c.trainer.prior_log_sigma;
  c.bo.standardize_labels = c.trainer.standardize_labels;
  c.generator.warp_seed = sub_seed(c, "warp");
}

namespace config_detail {

[[noreturn]] inline void fail(std::size_t line, std::string_view key, const std::string& what) {
  std::string where = line ? "line " + std::to_string(line) + ": " : "";
  throw Error(ErrorCode::kConfigParse, where + std::string(key) + ": " + what);
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || text.empty()) throw std::invalid_argument("not a number: '" + text + "'");
  return v;
}

inline bool parse_bool(const std::string& text) {
  if (text == "true") return true;
  if (text == "false") return false;
  throw std::invalid_argument("expected true or false, got '" + text + "'");
}

inline std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream s(text);
  std::string item;
  while (std::getline(s, item, ',')) out.push_back(trim(item));
  return out;
}

inline std::string format_double(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

struct Entry {
  std::string key;
  std::function<void(const std::string&)> set;
  std::function<std::string()> get;
};

inline Entry int_entry(std::string key, int& ref, int min_value) {
  return {key,
          [&ref, min_value, key](const std::string& t) {
            const int v = parse_number<int>(t);
            if (v < min_value) throw std::invalid_argument("must be at least " + std::to_string(min_value));
            ref = v;
          },
          [&ref] { return std::to_string(ref); }};
}

inline Entry u64_entry(std::string key, std::uint64_t& ref) {
  return {std::move(key), [&ref](const std::string& t) { ref = parse_number<std::uint64_t>(t); },
          [&ref] { return std::to_string(ref); }};
}

inline Entry double_entry(std::string key, double& ref, bool positive) {
  return {std::move(key),
          [&ref, positive](const std::string& t) {
            const double v = parse_number<double>(t);
            if (!std::isfinite(v) || (positive && !(v > 0.0))) throw std::invalid_argument("must be a positive number");
            ref = v;
          },
          [&ref] { return format_double(ref); }};
}

inline Entry bool_entry(std::string key, bool& ref) {
  return {std::move(key), [&ref](const std::string& t) { ref = parse_bool(t); },
          [&ref] { return std::string(ref ? "true" : "false"); }};
}

inline Entry range_entry(std::string key, Range& ref) {
  return {std::move(key),
          [&ref](const std::string& t) {
            const auto parts = split_list(t);
            if (parts.size() != 2) throw std::invalid_argument("expected 'lo, hi'");
            const Range r{parse_number<double>(parts[0]), parse_number<double>(parts[1])};
            if (!(r.lo > 0.0 && r.lo <= r.hi)) throw std::invalid_argument("range must satisfy 0 < lo <= hi");
            ref = r;
          },
          [&ref] { return format_double(ref.lo) + ", " + format_double(ref.hi); }};
}

inline Entry string_entry(std::string key, std::string& ref) {
  return {std::move(key), [&ref](const std::string& t) { ref = t; }, [&ref] { return ref; }};
}

/// Every recognised key, in canonical (hash) order.
inline std::vector<Entry> entries(RunConfig& c) {
  std::vector<Entry> e;
  e.push_back(u64_entry("seed", c.seed));
  e.push_back(int_entry("threads", c.threads, 1));

  e.push_back(int_entry("generator.num_train_tasks", c.num_train_tasks, 1));
  e.push_back(int_entry("generator.num_valid_tasks", c.num_valid_tasks, 0));
  e.push_back(int_entry("generator.num_test_tasks", c.num_test_tasks, 1));
  e.push_back(int_entry("generator.points_per_task", c.generator.points_per_task, 4));
  e.push_back(int_entry("generator.input_dim", c.generator.input_dim, 1));
  e.push_back(int_entry("generator.warp_width", c.generator.warp_width, 1));
  e.push_back(int_entry("generator.warp_output_dim", c.generator.warp_output_dim, 1));
  e.push_back(double_entry("generator.warp_scale", c.generator.warp_scale, true));
  e.push_back(range_entry("generator.noise_std_range", c.generator.noise_std_range));
  e.push_back(range_entry("generator.amplitude_range", c.generator.amplitude_range));
  e.push_back(range_entry("generator.lengthscale_range", c.generator.lengthscale_range));
  e.push_back({"generator.kind", [&c](const std::string& t) { c.generator.kind = parse_task_kind(t); },
               [&c] { return std::string(to_string(c.generator.kind)); }});

  e.push_back(int_entry("model.hidden_width", c.hidden_width, 1));
  e.push_back(int_entry("model.feature_dim", c.feature_dim, 1));
  e.push_back({"model.kernel", [&c](const std::string& t) { c.kernel = parse_kernel_family(t); },
               [&c] { return std::string(to_string(c.kernel)); }});

  e.push_back({"trainer.mode", [&c](const std::string& t) { c.trainer.mode = parse_mode(t); },
               [&c] { return std::string(to_string(c.trainer.mode)); }});
  e.push_back(int_entry("trainer.batch_size", c.trainer.batch_size, 1));
  e.push_back(double_entry("trainer.learning_rate", c.trainer.adam.learning_rate, true));
  e.push_back(double_entry("trainer.adam_beta1", c.trainer.adam.beta1, false));
  e.push_back(double_entry("trainer.adam_beta2", c.trainer.adam.beta2, false));
  e.push_back(double_entry("trainer.adam_eps", c.trainer.adam.eps, true));
  e.push_back(int_entry("trainer.max_outer_steps", c.trainer.max_outer_steps, 0));
  e.push_back(int_entry("trainer.eval_every", c.trainer.eval_every, 1));
  e.push_back(int_entry("trainer.patience", c.trainer.patience, 1));
  e.push_back(int_entry("trainer.support_size", c.trainer.support_size, 1));
  e.push_back(bool_entry("trainer.stratified", c.trainer.stratified));
  e.push_back(bool_entry("trainer.standardize_labels", c.trainer.standardize_labels));
  e.push_back(double_entry("trainer.clip_inf_norm", c.trainer.clip_inf_norm, true));
  e.push_back(int_entry("trainer.max_skipped_batches", c.trainer.max_skipped_batches, 1));
  e.push_back(bool_entry("trainer.warm_start", c.trainer.warm_start));
  e.push_back(double_entry("trainer.prior_log_sigma", c.trainer.prior_log_sigma, true));

  e.push_back(int_entry("inner.history", c.trainer.inner.lbfgs.history, 1));
  e.push_back(double_entry("inner.c1", c.trainer.inner.lbfgs.c1, true));
  e.push_back(double_entry("inner.c2", c.trainer.inner.lbfgs.c2, true));
  e.push_back(int_entry("inner.max_iterations", c.trainer.inner.lbfgs.max_iterations, 1));
  e.push_back(double_entry("inner.tolerance", c.trainer.inner.lbfgs.tolerance, true));
  e.push_back(int_entry("inner.max_restarts", c.trainer.inner.max_restarts, 0));
  e.push_back(double_entry("inner.restart_noise_std", c.trainer.inner.restart_noise_std, false));
  e.push_back(double_entry("inner.noise_floor", c.trainer.inner.noise_floor, true));

  e.push_back(int_entry("eval.support_size", c.eval_support_size, 1));
  e.push_back(int_entry("eval.num_splits", c.eval_num_splits, 1));
  e.push_back(bool_entry("eval.stratified", c.eval_stratified));
  e.push_back(bool_entry("eval.adapt_theta", c.eval.adapt_theta));
  e.push_back(double_entry("dkl.learning_rate", c.eval.dkl.learning_rate, true));
  e.push_back(int_entry("dkl.epochs", c.eval.dkl.epochs, 0));

  e.push_back(int_entry("bo.pool_size", c.bo_pool_size, 4));
  e.push_back(int_entry("bo.num_pools", c.bo_num_pools, 1));
  e.push_back(int_entry("bo.init_count", c.bo.init_count, 2));
  e.push_back(int_entry("bo.budget", c.bo.budget, 0));
  e.push_back(double_entry("bo.worst_fraction", c.bo.worst_fraction, true));
  e.push_back(int_entry("bo.num_seeds", c.bo_num_seeds, 1));
  e.push_back(bool_entry("bo.random_baseline", c.bo.random_acquisition));
  e.push_back({"bo.nll_support_sizes",
               [&c](const std::string& t) {
                 std::vector<int> sizes;
                 for (const auto& p : split_list(t)) {
                   const int v = parse_number<int>(p);
                   if (v < 1) throw std::invalid_argument("support sizes must be positive");
                   sizes.push_back(v);
                 }
                 if (sizes.empty()) throw std::invalid_argument("need at least one support size");
                 c.bo_nll_support_sizes = sizes;
               },
               [&c] {
                 std::string s;
                 for (std::size_t i = 0; i < c.bo_nll_support_sizes.size(); ++i)
                   s += (i ? ", " : "") + std::to_string(c.bo_nll_support_sizes[i]);
                 return s;
               }});
  e.push_back(int_entry("bo.nll_splits", c.bo_nll_splits, 1));

  e.push_back(string_entry("paths.tasks_dir", c.tasks_dir));
  e.push_back(string_entry("paths.checkpoint", c.checkpoint));
  return e;
}

}  // namespace config_detail

/// Applies one `key = value` assignment; `line` is only used in messages.
inline void set_config_value(RunConfig& c, std::string_view key, const std::string& value, std::size_t line = 0) {
  for (auto& entry : config_detail::entries(c)) {
    if (entry.key != key) continue;
    try {
      entry.set(value);
    } catch (const Error& e) {
      config_detail::fail(line, key, e.what());
    } catch (const std::exception& e) {
      config_detail::fail(line, key, e.what());
    }
    return;
  }
  config_detail::fail(line, key, "unknown key");
}

inline RunConfig parse_run_config(std::istream& in) {
  RunConfig c;
  std::vector<std::string> seen;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    const std::string t = config_detail::trim(text);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) config_detail::fail(line, t, "expected 'key = value'");
    const std::string key = config_detail::trim(std::string_view(t).substr(0, eq));
    const std::string value = config_detail::trim(std::string_view(t).substr(eq + 1));
    if (key.empty()) config_detail::fail(line, "<empty>", "missing key");
    if (std::find(seen.begin(), seen.end(), key) != seen.end()) config_detail::fail(line, key, "key given twice");
    seen.push_back(key);
    set_config_value(c, key, value, line);
  }
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::kConfigParse, "cannot open config file " + path);
  return parse_run_config(in);
}

/// Every key with its resolved value, one `key = value` line each, in canonical order.
inline std::string canonical_config(const RunConfig& c) {
  RunConfig copy = c;
  std::string out;
  for (const auto& entry : config_detail::entries(copy)) out += entry.key + " = " + entry.get() + "\n";
  return out;
}

/// Hash of the canonical form. The thread count is left out: it never changes results.
inline std::uint64_t config_hash(const RunConfig& c) {
  RunConfig copy = c;
  copy.threads = 1;
  return fnv1a64(canonical_config(copy));
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

}  // namespace adkf
