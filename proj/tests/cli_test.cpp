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

// Drives the adkf binary as a subprocess.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include <gtest/gtest.h>

#include "adkf/meta_trainer.hpp"
#include "adkf/run_config.hpp"

namespace fs = std::filesystem;

namespace adkf {
namespace {

struct Result {
  int status = -1;
  std::string stderr_text;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("adkf_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  Result run(const std::string& args) {
    const fs::path err = dir_ / "stderr.txt";
    const std::string cmd = std::string("\"") + ADKF_CLI_PATH + "\" " + args + " >/dev/null 2>\"" + err.string() + "\"";
    const int raw = std::system(cmd.c_str());
    return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, slurp(err)};
  }

  fs::path write_config(const std::string& extra = "") {
    const fs::path p = dir_ / "run.cfg";
    std::ofstream(p) << "seed = 4\n"
                        "generator.num_train_tasks = 4\ngenerator.num_valid_tasks = 2\ngenerator.num_test_tasks = 2\n"
                        "generator.points_per_task = 20\n"
                        "trainer.max_outer_steps = 2\ntrainer.eval_every = 1\ntrainer.batch_size = 2\n"
                        "trainer.support_size = 8\neval.support_size = 8\neval.num_splits = 2\n"
                        "model.hidden_width = 4\nmodel.feature_dim = 2\n"
                        "paths.tasks_dir = "
                     << (dir_ / "tasks").string() << "\npaths.checkpoint = " << (dir_ / "train" / "model.ckpt").string()
                     << "\n"
                     << extra;
    return p;
  }

  fs::path dir_;
};

TEST_F(Cli, MissingConfigIsAUsageErrorNamingTheFlag) {
  const Result r = run("meta-train --out " + dir_.string());
  EXPECT_EQ(r.status, 1);
  EXPECT_EQ(r.stderr_text.rfind("error:", 0), 0u) << r.stderr_text;
  EXPECT_NE(r.stderr_text.find("--config"), std::string::npos) << r.stderr_text;
}

TEST_F(Cli, UnknownSubcommandAndFlags) {
  Result r = run("frobnicate");
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.stderr_text.find("UnknownSubcommand"), std::string::npos) << r.stderr_text;
  EXPECT_EQ(run("").status, 1);
  EXPECT_EQ(run("gen-tasks --no-such-flag").status, 1);
  EXPECT_EQ(run("gen-tasks --help").status, 0);
}

TEST_F(Cli, ConfigErrorsNameTheLineAndExitOne) {
  const fs::path cfg = write_config("trainer.learnin_rate = 0.1\n");
  const Result r = run("meta-train --config " + cfg.string() + " --out " + dir_.string());
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.stderr_text.find("trainer.learnin_rate"), std::string::npos) << r.stderr_text;
  EXPECT_NE(r.stderr_text.find("line 16"), std::string::npos) << r.stderr_text;
}

TEST_F(Cli, RuntimeFailureExitsTwo) {
  const fs::path cfg = write_config();
  const Result r = run("meta-train --config " + cfg.string() + " --out " + (dir_ / "train").string());
  EXPECT_EQ(r.status, 2);  // no task files yet
  EXPECT_EQ(r.stderr_text.rfind("error:", 0), 0u) << r.stderr_text;
}

TEST_F(Cli, GenTasksIsByteReproducible) {
  ASSERT_EQ(run("gen-tasks --seed 7 --out " + (dir_ / "a").string()).status, 0);
  ASSERT_EQ(run("gen-tasks --seed 7 --out " + (dir_ / "b").string()).status, 0);
  for (const char* f : {"train.jsonl", "valid.jsonl", "test.jsonl", "config.resolved"})
    EXPECT_EQ(slurp(dir_ / "a" / f), slurp(dir_ / "b" / f)) << f;
  ASSERT_EQ(run("gen-tasks --seed 8 --out " + (dir_ / "c").string()).status, 0);
  EXPECT_NE(slurp(dir_ / "a" / "train.jsonl"), slurp(dir_ / "c" / "train.jsonl"));
}

TEST_F(Cli, DktCheckpointEvaluatesAsDktPlus) {
  const fs::path cfg = write_config();
  const std::string c = " --config " + cfg.string();
  ASSERT_EQ(run("gen-tasks" + c + " --out " + (dir_ / "tasks").string()).status, 0);
  ASSERT_EQ(run("meta-train --mode DKT" + c + " --out " + (dir_ / "train").string()).status, 0);
  const Result r = run("meta-test --mode DKT_PLUS" + c + " --out " + (dir_ / "test").string());
  ASSERT_EQ(r.status, 0) << r.stderr_text;
  EXPECT_TRUE(fs::exists(dir_ / "test" / "eval_records_DKT_PLUS.csv"));
  EXPECT_NE(slurp(dir_ / "test" / "eval_aggregates_DKT_PLUS.csv").find("DKT_PLUS,8,nll,"), std::string::npos);

  // Without --mode the checkpoint's own mode is used.
  ASSERT_EQ(run("meta-test" + c + " --out " + (dir_ / "test2").string()).status, 0);
  EXPECT_TRUE(fs::exists(dir_ / "test2" / "eval_records_DKT.csv"));

  ASSERT_EQ(run("meta-train --mode ADKF" + c + " --out " + (dir_ / "train").string()).status, 0);
  EXPECT_EQ(run("meta-test --mode DKT_PLUS" + c + " --out " + (dir_ / "test3").string()).status, 2);
}

TEST_F(Cli, EveryArtifactNamesFormatVersionAndConfigHash) {
  const fs::path cfg = write_config();
  const std::string c = " --config " + cfg.string();
  ASSERT_EQ(run("gen-tasks" + c + " --out " + (dir_ / "tasks").string()).status, 0);
  ASSERT_EQ(run("meta-train" + c + " --out " + (dir_ / "train").string()).status, 0);

  std::ifstream cfg_in(cfg);
  RunConfig rc = parse_run_config(cfg_in);
  const std::string hash = hex64(config_hash(rc));
  for (const auto& sub : {"tasks", "train"}) {
    for (const auto& e : fs::directory_iterator(dir_ / sub)) {
      const std::string name = e.path().filename().string();
      const std::string text = slurp(e.path());
      if (e.path().extension() == ".ckpt") {
        EXPECT_EQ(load_checkpoint(e.path().string()).config_hash, config_hash(rc));
        continue;
      }
      const std::string first = text.substr(0, text.find('\n'));
      EXPECT_NE(first.find("format_version"), std::string::npos) << name << ": " << first;
      EXPECT_NE(text.find(hash), std::string::npos) << name;
    }
  }
  // A flag override is part of the resolved config.
  ASSERT_EQ(run("gen-tasks" + c + " --seed 99 --out " + (dir_ / "other").string()).status, 0);
  EXPECT_EQ(slurp(dir_ / "other" / "config.resolved").find(hash), std::string::npos);
}

}  // namespace
}  // namespace adkf
