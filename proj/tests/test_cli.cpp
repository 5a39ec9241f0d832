// Copyright 2026 The pcee Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "pcee/cli.hpp"

using namespace pcee;
namespace fs = std::filesystem;

namespace {

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("pcee_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  int run(std::vector<std::string> args) {
    out_.str({});
    err_.str({});
    args.insert(args.begin(), "pcee");
    return cli::run(args, out_, err_);
  }

  fs::path dir_;
  std::ostringstream out_, err_;
};

}  // namespace

TEST_F(Cli, GenIsDeterministic) {
  ASSERT_EQ(run({"gen", "--out", path("a.bin"), "--n", "500", "--seed", "3"}), 0);
  ASSERT_EQ(run({"gen", "--out", path("b.bin"), "--n", "500", "--seed", "3"}), 0);
  EXPECT_EQ(read_file(path("a.bin")), read_file(path("b.bin")));
  ASSERT_EQ(run({"gen", "--out", path("c.ndjson"), "--n", "50", "--layers", "3", "--skills", "0.2,0.5,0.8"}), 0);
  const auto ds = read_trace(path("c.ndjson"));
  EXPECT_EQ(ds.header.n_layers, 3u);
  EXPECT_EQ(ds.size(), 50u);
}

TEST_F(Cli, FullPipelineControlsAccuracy) {
  ASSERT_EQ(run({"gen", "--out", path("all.bin"), "--n", "50000", "--gamma", "2", "--seed", "1"}), 0);
  ASSERT_EQ(run({"split", "--trace", path("all.bin"), "--fraction", "0.1", "--seed", "1", "--out-val", path("val.bin"),
                 "--out-test", path("test.bin")}),
            0);
  EXPECT_EQ(out_.str(), "validation 5000 test 45000\n");
  ASSERT_EQ(run({"calibrate", "--trace", path("val.bin"), "--out", path("diag.json")}), 0);
  ASSERT_EQ(run({"eval", "--trace", path("test.bin"), "--policy", "pcee", "--diagrams", path("diag.json"), "--delta",
                 "0.7", "--format", "json"}),
            0)
      << err_.str();
  const auto j = nlohmann::json::parse(out_.str());
  EXPECT_GE(j["accuracy"].get<double>(), 0.68);
  EXPECT_EQ(j["kind"], "pcee");
  EXPECT_EQ(j["n_samples"], 45000);
  EXPECT_EQ(j["exit_histogram"].size(), 4u);
  EXPECT_EQ(j["per_layer_ece"].size(), 4u);
  for (const char* k : {"policy", "delta", "prediction_error_pct", "avg_layers", "avg_flops", "per_layer_accuracy"}) {
    EXPECT_TRUE(j.contains(k)) << k;
  }

  // Thread count does not change the output.
  ASSERT_EQ(run({"eval", "--trace", path("test.bin"), "--policy", "pcee", "--diagrams", path("diag.json"), "--delta",
                 "0.7", "--threads", "4"}),
            0);
  const auto csv4 = out_.str();
  ASSERT_EQ(run({"eval", "--trace", path("test.bin"), "--policy", "pcee", "--diagrams", path("diag.json"), "--delta",
                 "0.7"}),
            0);
  EXPECT_EQ(out_.str(), csv4);

  ASSERT_EQ(run({"calibrate", "--trace", path("val.bin"), "--smooth-H", "150", "--out", path("ws.json")}), 0);
  ASSERT_EQ(run({"sweep", "--trace", path("test.bin"), "--policy", "pcee-ws", "--diagrams", path("ws.json"),
                 "--deltas", "0.6,0.7,0.8", "--format", "csv", "--pareto-out", path("front.csv")}),
            0)
      << err_.str();
  const auto sweep_csv = out_.str();
  EXPECT_EQ(std::count(sweep_csv.begin(), sweep_csv.end(), '\n'), 4);
  EXPECT_EQ(read_file(path("front.csv")).rfind("policy,delta,avg_flops,prediction_error_pct\n", 0), 0u);

  // Smoothed diagrams cannot drive the unsmoothed policy.
  EXPECT_EQ(run({"eval", "--trace", path("test.bin"), "--policy", "pcee", "--diagrams", path("ws.json")}), 2);
}

TEST_F(Cli, EcePrintsPerLayer) {
  ASSERT_EQ(run({"gen", "--out", path("t.bin"), "--n", "2000"}), 0);
  ASSERT_EQ(run({"calibrate", "--trace", path("t.bin"), "--layer", "2", "--bins", "10", "--out", path("d.json")}), 0);
  ASSERT_EQ(run({"ece", "--diagrams", path("d.json")}), 0);
  const auto text = out_.str();
  EXPECT_EQ(text.rfind("layer 2 ece ", 0), 0u);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1);
}

TEST_F(Cli, FitTempWritesTable) {
  ASSERT_EQ(run({"gen", "--out", path("t.bin"), "--n", "2000", "--gamma", "2"}), 0);
  ASSERT_EQ(run({"fit-temp", "--trace", path("t.bin"), "--out", path("temps.json")}), 0);
  const auto temps = temperatures_from_json(read_json_file(path("temps.json")));
  ASSERT_EQ(temps.temperatures.size(), 4u);
  for (double t : temps.temperatures) EXPECT_GT(t, 1.0);
  ASSERT_EQ(run({"eval", "--trace", path("t.bin"), "--policy", "confidence", "--temps", path("temps.json"), "--delta",
                 "0.5"}),
            0)
      << err_.str();
}

TEST_F(Cli, ConvertRoundTrips) {
  ASSERT_EQ(run({"gen", "--out", path("t.bin"), "--n", "300", "--gamma", "0.7"}), 0);
  ASSERT_EQ(run({"convert", "--in", path("t.bin"), "--out", path("t.ndjson")}), 0);
  ASSERT_EQ(run({"convert", "--in", path("t.ndjson"), "--out", path("u.dat"), "--to", "binary"}), 0);
  EXPECT_EQ(read_file(path("t.bin")), read_file(path("u.dat")));
  EXPECT_EQ(read_file(path("t.ndjson")).rfind("{\"version\"", 0), 0u);
}

TEST_F(Cli, ConfigFileFlagsLoseToCommandLine) {
  write_file_atomic(path("cfg.json"), R"({"n_samples": 40, "n_layers": 2, "layer_skills": [0.4, 0.8], "seed": 5})");
  ASSERT_EQ(run({"gen", "--config", path("cfg.json"), "--out", path("a.ndjson")}), 0) << err_.str();
  auto ds = read_trace(path("a.ndjson"));
  EXPECT_EQ(ds.size(), 40u);
  EXPECT_EQ(ds.header.n_layers, 2u);
  ASSERT_EQ(run({"gen", "--config", path("cfg.json"), "--out", path("b.ndjson"), "--n", "70"}), 0);
  EXPECT_EQ(read_trace(path("b.ndjson")).size(), 70u);
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run({}), 1);
  EXPECT_EQ(run({"bogus"}), 1);
  EXPECT_EQ(run({"gen"}), 1);
  EXPECT_EQ(run({"gen", "--out", path("x.bin"), "--n", "notanumber"}), 1);
  EXPECT_EQ(run({"gen", "--out", path("x.bin"), "--gamma", "-1"}), 1);
  EXPECT_EQ(run({"eval", "--trace", path("missing.bin")}), 2);
  write_file_atomic(path("bad.ndjson"), "{\"version\":1}\n");
  EXPECT_EQ(run({"eval", "--trace", path("bad.ndjson")}), 2);
  EXPECT_FALSE(err_.str().empty());
  ASSERT_EQ(run({"gen", "--out", path("t.bin"), "--n", "100"}), 0);
  EXPECT_EQ(run({"eval", "--trace", path("t.bin"), "--policy", "pcee"}), 1);
  EXPECT_EQ(run({"eval", "--trace", path("t.bin"), "--delta", "1.5"}), 1);
  EXPECT_EQ(run({"sweep", "--trace", path("t.bin"), "--deltas", "0.5,0.4"}), 1);
  EXPECT_EQ(run({"split", "--trace", path("t.bin"), "--fraction", "0", "--out-val", path("v"), "--out-test", path("w")}),
            1);
  EXPECT_EQ(run({"gen", "--config", path("missing.json"), "--out", path("x.bin")}), 2);
  EXPECT_EQ(run({"--help"}), 0);
}
