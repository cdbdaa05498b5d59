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

// adkf: command-line driver.
//
//   adkf gen-tasks  [--config C] [--seed S] --out DIR
//   adkf meta-train  --config C  [--mode M] [--seed S] [--support-size N] --out DIR
//   adkf meta-test   --config C  [--mode M] [--support-size N] [--splits N] --out DIR
//   adkf ablate      --config C  [--seed S] [--support-size N] [--splits N] --out DIR
//   adkf bo          --config C  [--seed S] --out DIR
//
// Exit status: 0 success, 1 usage or config error, 2 runtime failure.

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "adkf/adkf.hpp"

namespace fs = std::filesystem;

namespace {

using namespace adkf;

constexpr int kArtifactFormatVersion = 1;

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::optional<std::string> mode;
  std::optional<int> support_size;
  std::optional<int> splits;
  std::optional<int> threads;
};

/// A usage problem: reported with exit status 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Artifacts

std::string csv_header(const RunConfig& c) {
  return "# format_version=" + std::to_string(kArtifactFormatVersion) + " config_hash=" + hex64(config_hash(c)) + "\n";
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::kIo, "cannot open " + path.string() + " for writing");
  out << content;
  require(static_cast<bool>(out), ErrorCode::kIo, "write failed: " + path.string());
}

template <typename Writer>
void write_csv(const fs::path& path, const RunConfig& c, Writer&& writer) {
  std::ostringstream s;
  s << csv_header(c);
  writer(s);
  write_file(path, s.str());
}

/// Resolved configuration next to the artifacts, so a run can be repeated from its output.
/// The thread count goes to the .meta sidecar instead.
void write_resolved_config(const fs::path& dir, const RunConfig& c) {
  std::istringstream lines(canonical_config(c));
  std::string body, line;
  while (std::getline(lines, line))
    if (line.rfind("threads =", 0) != 0) body += line + "\n";
  write_file(dir / "config.resolved", csv_header(c) + body);
}

/// Timestamps live only here, so the other artifacts stay byte-reproducible.
void write_meta(const fs::path& dir, const std::string& command, const RunConfig& c, double seconds) {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  std::ostringstream s;
  s << "format_version=" << kArtifactFormatVersion << "\ncommand=" << command << "\nconfig_hash=" << hex64(config_hash(c)) << "\nthreads=" << c.threads
    << "\nfinished_utc=" << stamp << "\nwall_seconds=" << seconds << "\n";
  write_file(dir / (command + ".meta"), s.str());
}

// ---------------------------------------------------------------------------
// Configuration

RunConfig build_config(const Options& o, bool config_required, const std::string& command) {
  if (config_required && o.config_path.empty()) throw UsageError(command + ": --config is required");
  RunConfig c = o.config_path.empty() ? RunConfig{} : load_run_config(o.config_path);
  if (o.seed) c.seed = *o.seed;
  if (o.mode) set_config_value(c, "trainer.mode", *o.mode);
  if (o.support_size) {
    set_config_value(c, "trainer.support_size", std::to_string(*o.support_size));
    set_config_value(c, "eval.support_size", std::to_string(*o.support_size));
  }
  if (o.splits) set_config_value(c, "eval.num_splits", std::to_string(*o.splits));
  if (o.threads) set_config_value(c, "threads", std::to_string(*o.threads));
  resolve(c);
  return c;
}

fs::path prepare_out(const Options& o) {
  const fs::path dir(o.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, ErrorCode::kIo, "cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

std::vector<TaskData> load_split(const RunConfig& c, const std::string& name) {
  return load_tasks((fs::path(c.tasks_dir) / (name + ".jsonl")).string());
}

KernelSpec kernel_spec(const RunConfig& c) {
  return c.kernel == KernelFamily::kMatern52 ? KernelSpec::matern52() : KernelSpec::tanimoto();
}

Layout model_layout(const RunConfig& c, const std::vector<TaskData>& tasks) {
  require(!tasks.empty(), ErrorCode::kEmptyMetadataset, "no tasks to size the feature extractor from");
  return default_layout(tasks.front().features.cols(), c.hidden_width, c.feature_dim);
}

SplitSpec eval_split(const RunConfig& c) { return {c.eval_support_size, c.eval_stratified, sub_seed(c, "test_split")}; }

// ---------------------------------------------------------------------------
// Subcommands

void gen_tasks(const RunConfig& c, const fs::path& dir) {
  struct Part {
    const char* name;
    int count;
  };
  const Part parts[] = {{"train", c.num_train_tasks}, {"valid", c.num_valid_tasks}, {"test", c.num_test_tasks}};
  for (const auto& part : parts) {
    GeneratorConfig g = c.generator;
    g.num_tasks = part.count;
    g.seed = sub_seed(c, std::string(part.name) + "_tasks");
    g.id_prefix = part.name;
    const auto tasks = generate_metadataset(g);
    std::ostringstream s;
    write_tasks(s, tasks,
                {{"config_hash", hex64(config_hash(c))}, {"split", part.name}, {"generator", to_json(g)}});
    write_file(dir / (std::string(part.name) + ".jsonl"), s.str());
  }
}

TrainResult train_mode(const RunConfig& c, Mode mode, const std::vector<TaskData>& train,
                       const std::vector<TaskData>& valid) {
  TrainerConfig tc = c.trainer;
  tc.mode = mode;
  const DeepKernelModel m0 = initial_model(model_layout(c, train), kernel_spec(c), sub_seed(c, "model"), train, mode);
  return meta_train(train, valid, m0, tc);
}

void save_training(const RunConfig& c, const fs::path& dir, Mode mode, const TrainResult& r, const std::string& tag) {
  save_checkpoint((dir / ("model" + tag + ".ckpt")).string(),
                  Checkpoint{mode, r.best, r.optimizer, r.log.best_step, config_hash(c)});
  write_csv(dir / ("training_log" + tag + ".csv"), c, [&](std::ostream& s) { write_training_log(s, r.log); });
}

void meta_train_cmd(const RunConfig& c, const fs::path& dir) {
  const auto train = load_split(c, "train");
  const auto valid = load_split(c, "valid");
  const TrainResult r = train_mode(c, c.trainer.mode, train, valid);
  save_training(c, dir, c.trainer.mode, r, "");
}

void meta_test_cmd(const RunConfig& c, const fs::path& dir, bool mode_given) {
  require(!c.checkpoint.empty(), ErrorCode::kInvalidArgument, "meta-test needs paths.checkpoint in the config");
  const Checkpoint ckpt = load_checkpoint(c.checkpoint);
  const Mode mode = mode_given ? c.trainer.mode : ckpt.mode;
  if (mode == Mode::kDktPlus)
    require(ckpt.mode == Mode::kDkt || ckpt.mode == Mode::kDktPlus, ErrorCode::kInvalidArgument,
            "DKT_PLUS evaluates a DKT checkpoint, got one trained as " + std::string(to_string(ckpt.mode)));
  const auto test = load_split(c, "test");
  const EvalReport report = meta_test(ckpt.model, mode, test, eval_split(c), c.eval_num_splits, c.eval);
  const std::string tag(to_string(mode));
  write_csv(dir / ("eval_records_" + tag + ".csv"), c, [&](std::ostream& s) { write_eval_records(s, report); });
  write_csv(dir / ("eval_aggregates_" + tag + ".csv"), c, [&](std::ostream& s) { write_eval_aggregates(s, {report}); });
}

void ablate_cmd(const RunConfig& c, const fs::path& dir) {
  const auto train = load_split(c, "train");
  const auto valid = load_split(c, "valid");
  const auto test = load_split(c, "test");

  std::vector<EvalReport> reports;
  std::optional<DeepKernelModel> dkt_model;
  for (Mode mode : {Mode::kAdkfIft, Mode::kAdkf, Mode::kDkt, Mode::kDktPlus, Mode::kDkl}) {
    const std::string tag(to_string(mode));
    DeepKernelModel model;
    if (mode == Mode::kDktPlus) {
      model = *dkt_model;  // DKT_PLUS is DKT's model with θ re-fit per task
    } else {
      const TrainResult r = train_mode(c, mode, train, valid);
      save_training(c, dir, mode, r, "_" + tag);
      model = r.best;
      if (mode == Mode::kDkt) dkt_model = model;
    }
    reports.push_back(meta_test(model, mode, test, eval_split(c), c.eval_num_splits, c.eval));
    write_csv(dir / ("eval_records_" + tag + ".csv"), c, [&](std::ostream& s) { write_eval_records(s, reports.back()); });
  }
  write_csv(dir / "eval_aggregates.csv", c, [&](std::ostream& s) { write_eval_aggregates(s, reports); });

  // Per-task means, one column per method.
  const std::string metric = test.empty() ? "r2_os" : std::string(metric_name(test.front().kind));
  write_csv(dir / "paired_metrics.csv", c, [&](std::ostream& s) {
    s << "task_id,metric";
    for (const auto& r : reports) s << ',' << r.method;
    s << '\n';
    for (bool use_nll : {true, false}) {
      std::vector<std::vector<std::pair<std::string, double>>> means;
      for (const auto& r : reports) means.push_back(per_task_means(r, use_nll));
      for (const auto& task : test) {
        s << task.task_id << ',' << (use_nll ? "nll" : metric);
        for (const auto& m : means) {
          const auto it = std::find_if(m.begin(), m.end(), [&](const auto& p) { return p.first == task.task_id; });
          s << ',' << (it == m.end() ? "" : detail::csv_number(it->second));
        }
        s << '\n';
      }
    }
  });

  write_csv(dir / "wilcoxon.csv", c, [&](std::ostream& s) {
    s << "method_a,method_b,metric,n,mean_difference,statistic,p_value,exact\n";
    for (std::size_t j = 1; j < reports.size(); ++j) {
      for (bool use_nll : {true, false}) {
        const auto d = paired_differences(reports[0], reports[j], use_nll);
        s << reports[0].method << ',' << reports[j].method << ',' << (use_nll ? "nll" : metric) << ',';
        double mean = 0.0;
        for (double x : d) mean += x / static_cast<double>(d.size());
        try {
          const WilcoxonResult w = wilcoxon_signed_rank_two_sided(d);
          s << w.n << ',' << detail::csv_number(mean) << ',' << detail::csv_number(w.statistic) << ','
            << detail::csv_number(w.p_value) << ',' << (w.exact ? 1 : 0) << '\n';
        } catch (const Error& e) {
          if (e.code() != ErrorCode::kTooFewNonZero) throw;
          s << d.size() << ',' << detail::csv_number(mean) << ",,,\n";
        }
      }
    }
  });
}

void bo_cmd(const RunConfig& c, const fs::path& dir) {
  // Pools come from a warp that no training task has seen.
  GeneratorConfig g = c.generator;
  g.kind = TaskKind::kRegression;
  g.points_per_task = c.bo_pool_size;
  g.warp_seed = sub_seed(c, "bo_warp");
  g.seed = sub_seed(c, "bo_pools");
  g.id_prefix = "pool";
  const ExtractorParams warp = make_warp(g);

  std::optional<ExtractorParams> meta;
  if (!c.checkpoint.empty()) meta = load_checkpoint(c.checkpoint).model.extractor;

  std::vector<Pool> pools;
  for (int p = 0; p < c.bo_num_pools; ++p) {
    const TaskData t = generate_task(g, warp, static_cast<std::size_t>(p));
    Pool pool{t.task_id, t.labels, {}};
    pool.representations.push_back({"raw", t.features});
    pool.representations.push_back({"true_warp", forward(warp, t.features).output});
    pool.representations.push_back({"constant", Matrix::Zero(t.features.rows(), 1)});
    if (meta) pool.representations.push_back({"meta", forward(*meta, t.features).output});
    pools.push_back(std::move(pool));
  }
  const KernelSpec spec = KernelSpec::matern52();

  struct Job {
    std::size_t pool;
    std::size_t rep;  // representations.size() marks the random baseline
    int seed;
  };
  std::vector<Job> jobs;
  for (std::size_t p = 0; p < pools.size(); ++p)
    for (std::size_t r = 0; r <= pools[p].representations.size(); ++r)
      for (int s = 0; s < c.bo_num_seeds; ++s) jobs.push_back({p, r, s});
  const std::uint64_t run_seed = sub_seed(c, "bo_runs");
  const auto runs = parallel_map(jobs.size(), c.threads, [&](std::size_t j) {
    const Job& job = jobs[j];
    const Pool& pool = pools[job.pool];
    BoConfig cfg = c.bo;
    const bool random = job.rep == pool.representations.size();
    cfg.random_acquisition = random || c.bo.random_acquisition;
    // Same seed for every representation, so all runs start from the same points.
    const std::uint64_t seed = hash64(run_seed, static_cast<std::uint64_t>(job.seed));
    const Representation& rep = pool.representations[random ? 0 : job.rep];
    BoRun run = bo_run(rep.features, pool.values, spec, cfg, seed, random ? "random" : rep.name);
    run.seed = static_cast<std::uint64_t>(job.seed);
    return run;
  });

  for (std::size_t p = 0; p < pools.size(); ++p) {
    std::vector<BoRun> mine;
    for (std::size_t j = 0; j < jobs.size(); ++j)
      if (jobs[j].pool == p) mine.push_back(runs[j]);
    write_csv(dir / ("bo_trajectories_" + pools[p].name + ".csv"), c,
              [&](std::ostream& s) { write_bo_trajectories(s, mine); });
  }

  write_csv(dir / "bo_summary.csv", c, [&](std::ostream& s) {
    s << "pool,representation,iterations,mean_best_so_far,stderr,count\n";
    for (std::size_t p = 0; p < pools.size(); ++p) {
      for (std::size_t r = 0; r <= pools[p].representations.size(); ++r) {
        for (int it : {c.bo.budget / 2, c.bo.budget}) {
          std::vector<double> best;
          std::string name;
          for (std::size_t j = 0; j < jobs.size(); ++j)
            if (jobs[j].pool == p && jobs[j].rep == r) {
              best.push_back(best_after(runs[j], it));
              name = runs[j].representation;
            }
          const Aggregate a = aggregate("best", best);
          s << pools[p].name << ',' << name << ',' << it << ',' << detail::csv_number(a.mean) << ','
            << detail::csv_number(a.stderr_) << ',' << a.count << '\n';
        }
      }
    }
  });

  const auto cells = predictive_nll_table(pools, spec, c.bo_nll_support_sizes, c.bo_nll_splits, c.bo,
                                          sub_seed(c, "bo_nll"), c.threads);
  write_csv(dir / "nll_table.csv", c, [&](std::ostream& s) { write_nll_table(s, cells); });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deep-kernel GP meta-learning: task generation, meta-training, meta-testing, ablations and BO."};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub, bool with_mode) {
    sub->add_option("--config", o.config_path, "key = value configuration file");
    sub->add_option("--seed", o.seed, "global seed (overrides the config)");
    sub->add_option("--out", o.out, "output directory")->capture_default_str();
    sub->add_option("--threads", o.threads, "worker threads (results do not depend on it)")->check(CLI::PositiveNumber);
    sub->add_option("--support-size", o.support_size, "support set size for training and evaluation splits")
        ->check(CLI::PositiveNumber);
    sub->add_option("--splits", o.splits, "support/query splits per test task")->check(CLI::PositiveNumber);
    if (with_mode) sub->add_option("--mode", o.mode, "ADKF_IFT, ADKF, DKT, DKT_PLUS or DKL");
  };
  const std::vector<std::string> commands = {"gen-tasks", "meta-train", "meta-test", "ablate", "bo"};
  add_common(app.add_subcommand(commands[0], "generate train/valid/test task files"), false);
  add_common(app.add_subcommand(commands[1], "meta-train one mode; writes a checkpoint and a training log"), true);
  add_common(app.add_subcommand(commands[2], "evaluate a checkpoint on the test tasks"), true);
  add_common(app.add_subcommand(commands[3], "train and evaluate all five modes with paired tests"), false);
  add_common(app.add_subcommand(commands[4], "Bayesian optimisation trajectories and a predictive NLL table"), false);

  if (argc > 1 && argv[1][0] != '-' && std::find(commands.begin(), commands.end(), argv[1]) == commands.end()) {
    std::cerr << "error: UnknownSubcommand: '" << argv[1]
              << "' (expected gen-tasks, meta-train, meta-test, ablate or bo)\n";
    return 1;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  const auto start = std::chrono::steady_clock::now();
  CLI::App* sub = app.get_subcommands().front();
  const std::string command = sub->get_name();
  try {
    const RunConfig c = build_config(o, command != "gen-tasks", command);
    const fs::path dir = prepare_out(o);
    if (command == "gen-tasks") gen_tasks(c, dir);
    else if (command == "meta-train") meta_train_cmd(c, dir);
    else if (command == "meta-test") meta_test_cmd(c, dir, o.mode.has_value());
    else if (command == "ablate") ablate_cmd(c, dir);
    else if (command == "bo") bo_cmd(c, dir);
    write_resolved_config(dir, c);
    write_meta(dir, command, c, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::kConfigParse ? 1 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
