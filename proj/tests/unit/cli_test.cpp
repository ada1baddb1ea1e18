// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

namespace moeplan {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

const std::string kFixtures = MOEPLAN_FIXTURE_DIR;

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("moeplan_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    unsetenv("MOE_PLANNER_SEED");
  }
  void TearDown() override { fs::remove_all(dir_); }

  int run(std::vector<std::string> args, const fs::path& out) {
    args.push_back("--out");
    args.push_back(out.string());
    std::ostringstream o, e;
    const int code = cli::run(args, o, e);
    stdout_ = o.str();
    stderr_ = e.str();
    return code;
  }
  int run(std::vector<std::string> args) { return run(std::move(args), dir_); }

  static std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  fs::path dir_;
  std::string stdout_, stderr_;
};

TEST_F(Cli, PlanOnTinyTest) {
  ASSERT_EQ(run({"plan", "--preset", "tiny-test", "--hardware-preset", "tiny-test", "--prompt-len", "64",
                 "--decode-len", "16", "--num-sequences", "64"}),
            cli::kExitOk)
      << stderr_;
  const json doc = json::parse(slurp(dir_ / "plan.json"));
  EXPECT_GT(doc["throughput"].get<double>(), 0.0);
  EXPECT_NE(stdout_.find("throughput="), std::string::npos);
  EXPECT_NE(stdout_.find("omega="), std::string::npos);
}

TEST_F(Cli, HostTooSmallIsNoFeasibleB) {
  EXPECT_EQ(run({"plan", "--preset", "deepseek-v2-like", "--hardware-preset", "tiny-test"}), cli::kExitNoPlan);
  EXPECT_NE(stderr_.find("NoFeasibleB"), std::string::npos) << stderr_;
}

TEST_F(Cli, ConfigErrors) {
  EXPECT_EQ(run({"plan", "--hardware-preset", "tiny-test"}), cli::kExitConfig);
  EXPECT_EQ(run({"plan", "--preset", "nope", "--hardware-preset", "tiny-test"}), cli::kExitConfig);
  EXPECT_EQ(run({"plan", "--config", (dir_ / "missing.json").string()}), cli::kExitConfig);
  EXPECT_EQ(run({"plan", "--preset", "tiny-test", "--hardware-preset", "tiny-test", "--phase", "both2"}),
            cli::kExitConfig);
  EXPECT_EQ(run({"frobnicate"}), cli::kExitConfig);
  EXPECT_EQ(run({"sweep", "--config", kFixtures + "/golden_config.json", "--variable", "temperature"}),
            cli::kExitConfig);
}

TEST_F(Cli, MalformedPlanRejected) {
  std::ofstream(dir_ / "bad.json") << R"({"plan": {"B": 4, "b_a": 8, "b_e": 64, "omega": 0.0, "s_expert": 0, "s_params": 0}})";
  EXPECT_EQ(run({"simulate", "--config", kFixtures + "/golden_config.json", "--plan", (dir_ / "bad.json").string()}),
            cli::kExitConfig);
  std::ofstream(dir_ / "junk.json") << "{not json";
  EXPECT_EQ(run({"simulate", "--config", kFixtures + "/golden_config.json", "--plan", (dir_ / "junk.json").string()}),
            cli::kExitConfig);
}

TEST_F(Cli, GoldenPlanIsByteIdentical) {
  const std::vector<std::string> args = {"plan", "--config", kFixtures + "/golden_config.json"};
  ASSERT_EQ(run(args, dir_ / "a"), cli::kExitOk) << stderr_;
  ASSERT_EQ(run(args, dir_ / "b"), cli::kExitOk);
  EXPECT_EQ(slurp(dir_ / "a" / "plan.json"), slurp(dir_ / "b" / "plan.json"));
  EXPECT_EQ(json::parse(slurp(dir_ / "a" / "plan.json")).size(), 2u);
}

TEST_F(Cli, SimulateSeedsAndTrace) {
  ASSERT_EQ(run({"plan", "--config", kFixtures + "/golden_config.json", "--phase", "decode"}), cli::kExitOk);
  const std::string plan = (dir_ / "plan.json").string();
  const std::vector<std::string> args = {"simulate", "--config", kFixtures + "/golden_config.json", "--plan", plan,
                                         "--phase", "decode", "--trace"};
  ASSERT_EQ(run(args, dir_ / "a"), cli::kExitOk) << stderr_;
  ASSERT_EQ(run(args, dir_ / "b"), cli::kExitOk);
  EXPECT_EQ(slurp(dir_ / "a" / "sim_report.json"), slurp(dir_ / "b" / "sim_report.json"));
  EXPECT_EQ(slurp(dir_ / "a" / "trace.jsonl"), slurp(dir_ / "b" / "trace.jsonl"));
  const json report = json::parse(slurp(dir_ / "a" / "sim_report.json"));
  EXPECT_GT(report["makespan"].get<double>(), 0.0);

  setenv("MOE_PLANNER_SEED", "8", 1);
  ASSERT_EQ(run(args, dir_ / "c"), cli::kExitOk);
  EXPECT_NE(slurp(dir_ / "a" / "sim_report.json"), slurp(dir_ / "c" / "sim_report.json"));
  setenv("MOE_PLANNER_SEED", "eight", 1);
  EXPECT_EQ(run(args, dir_ / "d"), cli::kExitConfig);
  unsetenv("MOE_PLANNER_SEED");
}

TEST_F(Cli, SweepWithoutCpuPeaksAtZero) {
  ASSERT_EQ(run({"sweep", "--preset", "tiny-test", "--hardware-preset", "a5000-c2-nocpu", "--prompt-len", "64",
                 "--decode-len", "16", "--variable", "omega"}),
            cli::kExitOk)
      << stderr_;
  std::istringstream csv(slurp(dir_ / "sweep.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line.rfind("variable,value,phase,feasible,throughput", 0), 0u);
  double best = -1.0, best_omega = -1.0;
  int rows = 0;
  while (std::getline(csv, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    ASSERT_GE(cells.size(), 5u);
    const double tput = std::stod(cells[4]);
    if (tput > best) {
      best = tput;
      best_omega = std::stod(cells[1]);
    }
    ++rows;
  }
  EXPECT_EQ(rows, 11);
  EXPECT_EQ(best_omega, 0.0);
}

TEST_F(Cli, TrafficOnePassIsKvOnly) {
  const ModelSpec m = preset("tiny-test");
  ASSERT_EQ(run({"traffic", "--preset", "tiny-test", "--hardware-preset", "tiny-test", "--prompt-len", "64",
                 "--decode-len", "16", "--B", "16", "--b-a", "4", "--b-e", "64", "--s-expert",
                 std::to_string(2 * m.expert_bytes), "--s-params", std::to_string(m.model_bytes()), "--grid", "16"}),
            cli::kExitOk)
      << stderr_;
  Bytes context = 0;
  for (std::int64_t s = 0; s < 16; ++s) context += 64 + s;
  const Bytes kv = 16 * context * m.kv_bytes_per_token();
  const std::string csv = slurp(dir_ / "traffic.csv");
  EXPECT_NE(csv.find("16,full_kv_offload," + std::to_string(kv) + "\n"), std::string::npos) << csv;
}

TEST_F(Cli, CostMatchesComponentSums) {
  ASSERT_EQ(run({"cost", "--preset", "tiny-test", "--hardware-preset", "tiny-test", "--components",
                 kFixtures + "/table5_baseline.json", "--throughput", "1000"}),
            cli::kExitOk)
      << stderr_;
  const json r = json::parse(slurp(dir_ / "cost.json"));
  EXPECT_EQ(r["total_power"].get<double>(), 1780.0);
  EXPECT_EQ(r["total_price"].get<double>(), 22300.0);
}

TEST_F(Cli, DagExportParses) {
  const ModelSpec m = preset("tiny-test");
  ASSERT_EQ(run({"dag", "export", "--preset", "tiny-test", "--hardware-preset", "tiny-test", "--prompt-len", "64",
                 "--decode-len", "16", "--B", "16", "--b-a", "4", "--b-e", "64", "--omega", "0.5", "--s-expert",
                 std::to_string(2 * m.expert_bytes)}),
            cli::kExitOk)
      << stderr_;
  const oracle::DotGraph g = oracle::parse_dot(slurp(dir_ / "dag.dot"));
  const json j = json::parse(slurp(dir_ / "dag.json"));
  EXPECT_EQ(g.nodes.size(), j["nodes"].size());
  EXPECT_EQ(g.edges.size(), j["edges"].size());
}

}  // namespace
}  // namespace moeplan
