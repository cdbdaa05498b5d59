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

// Synthetic few-shot meta-datasets: a shared random warp of the inputs, and
// per-task GP draws whose noise, amplitude and lengthscale all differ.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "adkf/core_math.hpp"
#include "adkf/error.hpp"
#include "adkf/feature_extractor.hpp"
#include "adkf/gp.hpp"
#include "adkf/kernels.hpp"
#include "adkf/random.hpp"

namespace adkf {

inline constexpr int kTaskFormatVersion = 1;

struct Range {
  double lo = 1.0;
  double hi = 1.0;
};

struct GeneratorConfig {
  int num_tasks = 64;
  int points_per_task = 64;
  int input_dim = 4;
  int warp_width = 16;
  int warp_output_dim = 4;
  /// Multiplies the warp's output layer; sets the spread of z relative to the lengthscales.
  double warp_scale = 4.0;
  Range noise_std_range{0.02, 0.5};
  Range amplitude_range{0.2, 5.0};
  Range lengthscale_range{0.5, 2.0};
  TaskKind kind = TaskKind::kRegression;
  std::uint64_t seed = 0;
  /// The warp has its own seed so several metadatasets can share one warp.
  std::uint64_t warp_seed = 0;
  std::string id_prefix = "task";
};

/// The (σ, a, ℓ) a task was drawn with.
struct GenerativeParams {
  double noise_std = 0.0;
  double amplitude = 0.0;
  double lengthscale = 0.0;
  bool operator==(const GenerativeParams&) const = default;
};

/// An unsplit task: every point with its label.
struct TaskData {
  std::string task_id;
  TaskKind kind = TaskKind::kRegression;
  InputKind feature_kind = InputKind::kDense;
  Matrix features;
  Vector labels;
  std::optional<GenerativeParams> generative;

  [[nodiscard]] Eigen::Index size() const noexcept { return labels.size(); }
  bool operator==(const TaskData& o) const {
    return task_id == o.task_id && kind == o.kind && feature_kind == o.feature_kind &&
           features.rows() == o.features.rows() && features.cols() == o.features.cols() && features == o.features &&
           labels.size() == o.labels.size() && labels == o.labels && generative == o.generative;
  }
};

inline void validate_generator(const GeneratorConfig& c) {
  auto check_range = [](const Range& r, const char* name) {
    require(r.lo > 0.0 && r.lo <= r.hi, ErrorCode::kInvalidArgument,
            std::string(name) + " must satisfy 0 < lo <= hi");
  };
  check_range(c.noise_std_range, "noise_std_range");
  check_range(c.amplitude_range, "amplitude_range");
  check_range(c.lengthscale_range, "lengthscale_range");
  require(c.num_tasks >= 0, ErrorCode::kInvalidArgument, "num_tasks must be nonnegative");
  require(c.points_per_task >= 4, ErrorCode::kInvalidArgument, "points_per_task must be at least 4");
  require(c.input_dim >= 1 && c.warp_width >= 1 && c.warp_output_dim >= 1, ErrorCode::kInvalidArgument,
          "warp dimensions must be positive");
}

/// The shared ground-truth feature map: a seeded tanh net with one hidden layer.
inline ExtractorParams make_warp(const GeneratorConfig& c) {
  const Layout layout{{static_cast<Eigen::Index>(c.input_dim), static_cast<Eigen::Index>(c.warp_width)},
                      {static_cast<Eigen::Index>(c.warp_width), static_cast<Eigen::Index>(c.warp_output_dim)}};
  ExtractorParams warp = init_params(layout, hash64(c.warp_seed, "warp"));
  const auto first = static_cast<Eigen::Index>(c.input_dim * c.warp_width + c.warp_width);
  warp.flat_values.tail(warp.size() - first) *= c.warp_scale;
  return warp;
}

namespace detail {

inline Vector draw_normals(Rng& rng, Eigen::Index n) {
  Vector z(n);
  for (Eigen::Index i = 0; i < n; ++i) z[i] = rng.normal();
  return z;
}

inline double sign_label(double v) { return v >= 0.0 ? 1.0 : -1.0; }

}  // namespace detail

/// One task of the stream; index i is independent of every other index.
inline TaskData generate_task(const GeneratorConfig& c, const ExtractorParams& warp, std::size_t index) {
  Rng rng = Rng(hash64(c.seed, "tasks")).fork(index);
  TaskData t;
  t.task_id = c.id_prefix + "-" + std::to_string(index);
  t.kind = c.kind;
  GenerativeParams g;
  g.noise_std = rng.log_uniform(c.noise_std_range.lo, c.noise_std_range.hi);
  g.amplitude = rng.log_uniform(c.amplitude_range.lo, c.amplitude_range.hi);
  g.lengthscale = rng.log_uniform(c.lengthscale_range.lo, c.lengthscale_range.hi);
  t.generative = g;

  const Eigen::Index n = c.points_per_task;
  t.features.resize(n, c.input_dim);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < c.input_dim; ++j) t.features(i, j) = rng.uniform(-1.0, 1.0);
  const Matrix z = forward(warp, t.features).output;

  KernelParams kp;
  kp.log_lengthscale = std::log(g.lengthscale);
  kp.log_signal_amp = std::log(g.amplitude);
  const SpdFactor chol = cholesky_decompose(kernel_matrix(KernelSpec::matern52(), kp, z, z));
  const Vector f = chol.lower * detail::draw_normals(rng, n);

  if (c.kind == TaskKind::kRegression) {
    t.labels = f + g.noise_std * detail::draw_normals(rng, n);
    return t;
  }
  t.labels.resize(n);
  for (int attempt = 0; attempt < 100; ++attempt) {
    const Vector eps = detail::draw_normals(rng, n);
    for (Eigen::Index i = 0; i < n; ++i) t.labels[i] = detail::sign_label(f[i] + g.noise_std * eps[i]);
    if ((t.labels.array() > 0).any() && (t.labels.array() < 0).any()) return t;
  }
  // Still one class: flip the point whose latent value is closest to the median |f|.
  std::vector<double> mags(f.data(), f.data() + n);
  for (auto& m : mags) m = std::abs(m);
  std::nth_element(mags.begin(), mags.begin() + n / 2, mags.end());
  const double median = mags[static_cast<std::size_t>(n / 2)];
  Eigen::Index flip = 0;
  for (Eigen::Index i = 1; i < n; ++i)
    if (std::abs(std::abs(f[i]) - median) < std::abs(std::abs(f[flip]) - median)) flip = i;
  t.labels[flip] = -t.labels[flip];
  require((t.labels.array() > 0).any() && (t.labels.array() < 0).any(), ErrorCode::kDegenerateTask,
          "task " + t.task_id + " could not obtain both classes");
  return t;
}

inline std::vector<TaskData> generate_metadataset(const GeneratorConfig& c) {
  validate_generator(c);
  const ExtractorParams warp = make_warp(c);
  std::vector<TaskData> tasks;
  tasks.reserve(static_cast<std::size_t>(c.num_tasks));
  for (int i = 0; i < c.num_tasks; ++i) tasks.push_back(generate_task(c, warp, static_cast<std::size_t>(i)));
  return tasks;
}

// ---------------------------------------------------------------------------
// Support/query splitting.

struct SplitSpec {
  int support_size = 16;
  bool stratified = true;
  std::uint64_t seed = 0;
};

/// Stream for split `split_index` of a task; identical across methods so comparisons are paired.
inline Rng split_rng(const SplitSpec& spec, std::string_view task_id, std::uint64_t split_index) {
  return Rng(hash64(hash64(spec.seed, task_id), split_index));
}

namespace detail {

inline Task gather(const TaskData& data, std::vector<Eigen::Index> support, std::vector<Eigen::Index> query) {
  std::sort(support.begin(), support.end());
  std::sort(query.begin(), query.end());
  Task t;
  t.task_id = data.task_id;
  t.kind = data.kind;
  t.feature_kind = data.feature_kind;
  t.support_x = data.features(support, Eigen::all);
  t.support_y = data.labels(support);
  t.query_x = data.features(query, Eigen::all);
  t.query_y = data.labels(query);
  return t;
}

}  // namespace detail

/// Random support/query partition. Sets are returned in ascending point order.
inline Task split(const TaskData& data, const SplitSpec& spec, Rng& rng) {
  const Eigen::Index n = data.size();
  require(spec.support_size >= 1 && spec.support_size < n, ErrorCode::kInvalidArgument,
          "support size " + std::to_string(spec.support_size) + " must be in [1, " + std::to_string(n) + ")");
  const auto k = static_cast<Eigen::Index>(spec.support_size);

  if (!spec.stratified || data.kind != TaskKind::kClassification) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    rng.shuffle(idx);
    return detail::gather(data, {idx.begin(), idx.begin() + k}, {idx.begin() + k, idx.end()});
  }

  std::vector<Eigen::Index> pos, neg;
  for (Eigen::Index i = 0; i < n; ++i) (data.labels[i] > 0 ? pos : neg).push_back(i);
  const auto np = static_cast<Eigen::Index>(pos.size());
  const auto nn = static_cast<Eigen::Index>(neg.size());
  require(np >= 2 && nn >= 2, ErrorCode::kInfeasibleStratification,
          "task " + data.task_id + " has " + std::to_string(np) + " positives and " + std::to_string(nn) +
              " negatives; stratification needs at least 2 of each");
  auto kp = static_cast<Eigen::Index>(std::lround(static_cast<double>(k) * static_cast<double>(np) / n));
  // Keep one of each class on both sides where the sizes allow it.
  const Eigen::Index lo = std::max<Eigen::Index>(k >= 2 ? 1 : 0, k - (nn - 1));
  const Eigen::Index hi = std::min<Eigen::Index>(np - 1, k - (k >= 2 ? 1 : 0));
  if (lo <= hi) kp = std::clamp(kp, lo, hi);
  kp = std::clamp<Eigen::Index>(kp, std::max<Eigen::Index>(0, k - nn), std::min(np, k));
  rng.shuffle(pos);
  rng.shuffle(neg);
  std::vector<Eigen::Index> support(pos.begin(), pos.begin() + kp);
  support.insert(support.end(), neg.begin(), neg.begin() + (k - kp));
  std::vector<Eigen::Index> query(pos.begin() + kp, pos.end());
  query.insert(query.end(), neg.begin() + (k - kp), neg.end());
  return detail::gather(data, std::move(support), std::move(query));
}

// ---------------------------------------------------------------------------
// Task files: JSON Lines, one header record then one record per task.

inline nlohmann::json to_json(const GeneratorConfig& c) {
  return {{"num_tasks", c.num_tasks},
          {"points_per_task", c.points_per_task},
          {"input_dim", c.input_dim},
          {"warp_width", c.warp_width},
          {"warp_output_dim", c.warp_output_dim},
          {"warp_scale", c.warp_scale},
          {"noise_std_range", {c.noise_std_range.lo, c.noise_std_range.hi}},
          {"amplitude_range", {c.amplitude_range.lo, c.amplitude_range.hi}},
          {"lengthscale_range", {c.lengthscale_range.lo, c.lengthscale_range.hi}},
          {"kind", std::string(to_string(c.kind))},
          {"seed", c.seed},
          {"warp_seed", c.warp_seed},
          {"id_prefix", c.id_prefix}};
}

inline nlohmann::json to_json(const TaskData& t) {
  nlohmann::json features = nlohmann::json::array();
  for (Eigen::Index i = 0; i < t.features.rows(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < t.features.cols(); ++j) row.push_back(t.features(i, j));
    features.push_back(std::move(row));
  }
  nlohmann::json j = {{"task_id", t.task_id},
                      {"kind", std::string(to_string(t.kind))},
                      {"feature_kind", std::string(to_string(t.feature_kind))},
                      {"features", std::move(features)},
                      {"labels", std::vector<double>(t.labels.data(), t.labels.data() + t.labels.size())}};
  if (t.generative)
    j["generative"] = {{"noise_std", t.generative->noise_std},
                       {"amplitude", t.generative->amplitude},
                       {"lengthscale", t.generative->lengthscale}};
  return j;
}

/// `header` may carry extra fields (config echo, config hash); format_version is always set.
inline void write_tasks(std::ostream& out, const std::vector<TaskData>& tasks, nlohmann::json header = {}) {
  if (!header.is_object()) header = nlohmann::json::object();
  header["format_version"] = kTaskFormatVersion;
  header["record"] = "header";
  out << header.dump() << '\n';
  for (const auto& t : tasks) out << to_json(t).dump() << '\n';
}

inline void save_tasks(const std::string& path, const std::vector<TaskData>& tasks, nlohmann::json header = {}) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot open " + path + " for writing");
  write_tasks(out, tasks, std::move(header));
  require(static_cast<bool>(out), ErrorCode::kIo, "write failed: " + path);
}

namespace detail {

[[noreturn]] inline void malformed(std::size_t line, const std::string& what) {
  throw Error(ErrorCode::kMalformedRecord, "line " + std::to_string(line) + ": " + what);
}

inline const nlohmann::json& field(const nlohmann::json& j, const char* name, std::size_t line) {
  const auto it = j.find(name);
  if (it == j.end()) malformed(line, std::string("missing field '") + name + "'");
  return *it;
}

inline double number(const nlohmann::json& v, std::size_t line, const char* what) {
  if (!v.is_number()) malformed(line, std::string(what) + " must be a number");
  return v.get<double>();
}

inline TaskData parse_task(const nlohmann::json& j, std::size_t line) {
  if (!j.is_object()) malformed(line, "record is not an object");
  TaskData t;
  const auto& id = field(j, "task_id", line);
  if (!id.is_string()) malformed(line, "task_id must be a string");
  t.task_id = id.get<std::string>();
  try {
    const auto& kind = field(j, "kind", line);
    if (!kind.is_string()) malformed(line, "kind must be a string");
    t.kind = parse_task_kind(kind.get<std::string>());
    if (const auto it = j.find("feature_kind"); it != j.end()) {
      if (!it->is_string()) malformed(line, "feature_kind must be a string");
      const std::string fk = it->get<std::string>();
      if (fk == "dense") t.feature_kind = InputKind::kDense;
      else if (fk == "counts") t.feature_kind = InputKind::kCounts;
      else malformed(line, "unknown feature_kind '" + fk + "'");
    }
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kMalformedRecord) throw;
    malformed(line, e.what());
  }

  const auto& labels = field(j, "labels", line);
  if (!labels.is_array()) malformed(line, "labels must be an array");
  t.labels.resize(static_cast<Eigen::Index>(labels.size()));
  for (std::size_t i = 0; i < labels.size(); ++i) t.labels[static_cast<Eigen::Index>(i)] = number(labels[i], line, "label");

  const auto& features = field(j, "features", line);
  if (!features.is_array()) malformed(line, "features must be an array of arrays");
  if (features.size() != labels.size())
    malformed(line, "features has " + std::to_string(features.size()) + " rows but labels has " +
                        std::to_string(labels.size()));
  const std::size_t dim = features.empty() ? 0 : features[0].size();
  t.features.resize(static_cast<Eigen::Index>(features.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (!features[i].is_array() || features[i].size() != dim) malformed(line, "feature rows must have equal length");
    for (std::size_t k = 0; k < dim; ++k)
      t.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = number(features[i][k], line, "feature");
  }
  if (t.kind == TaskKind::kClassification)
    for (Eigen::Index i = 0; i < t.labels.size(); ++i)
      if (t.labels[i] != 1.0 && t.labels[i] != -1.0) malformed(line, "classification labels must be +1 or -1");
  if (t.feature_kind == InputKind::kCounts && t.features.size() > 0 && t.features.minCoeff() < 0.0)
    malformed(line, "count features must be nonnegative");

  if (const auto it = j.find("generative"); it != j.end()) {
    GenerativeParams g;
    g.noise_std = number(field(*it, "noise_std", line), line, "noise_std");
    g.amplitude = number(field(*it, "amplitude", line), line, "amplitude");
    g.lengthscale = number(field(*it, "lengthscale", line), line, "lengthscale");
    t.generative = g;
  }
  return t;
}

}  // namespace detail

/// Parses a task stream. An empty stream is an empty metadataset.
inline std::vector<TaskData> read_tasks(std::istream& in) {
  std::vector<TaskData> tasks;
  std::string text;
  std::size_t line = 0;
  bool seen_header = false;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      detail::malformed(line, std::string("invalid JSON: ") + e.what());
    }
    if (j.is_object() && j.contains("format_version")) {
      if (seen_header || !tasks.empty()) detail::malformed(line, "header record must come first");
      seen_header = true;
      const auto& v = j["format_version"];
      if (!v.is_number_integer() || v.get<int>() != kTaskFormatVersion)
        throw Error(ErrorCode::kVersionMismatch, "task file format_version " + v.dump() + " is not supported (expected " +
                                                     std::to_string(kTaskFormatVersion) + ")");
      continue;
    }
    tasks.push_back(detail::parse_task(j, line));
  }
  return tasks;
}

inline std::vector<TaskData> load_tasks(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::kIo, "cannot open task file " + path);
  return read_tasks(in);
}

}  // namespace adkf
