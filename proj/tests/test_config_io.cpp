// Copyright 2026 The gemlora Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "gemlora/config_io.hpp"
#include "gemlora/errors.hpp"

namespace gemlora {
namespace {

std::string message_of(const std::string& text) {
  try {
    parse_run_config(text, "cfg.json");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

TEST(ConfigIo, DefaultRoundTrip) {
  const RunConfig c;
  const RunConfig back = run_config_from_json(to_json(c));
  EXPECT_TRUE(back == c);
  EXPECT_EQ(to_json(back), to_json(c));
}

TEST(ConfigIo, ModifiedRoundTrip) {
  RunConfig c;
  c.train.method = Method::gem_exact;
  c.train.lr = 0.05;
  c.train.optimizer = OptimizerKind::adamw;
  c.train.adamw.beta2 = 0.99;
  c.train.margin.enabled = true;
  c.train.model.rank = 2;
  c.train.model.activation = Activation::softplus;
  c.stream.prior_schedule = {{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}};
  c.stream.class_separation = 3.25;
  c.data_csv = "/tmp/x.csv";
  const RunConfig back = parse_run_config(to_json(c).dump(2));
  EXPECT_TRUE(back == c);
}

TEST(ConfigIo, PartialDocumentUsesDefaults) {
  const RunConfig c = parse_run_config(R"({"schema": "gemlora.config/1", "train": {"lr": 0.05}})");
  EXPECT_EQ(c.train.lr, 0.05);
  EXPECT_EQ(c.train.pgd_iteration, 3u);
  EXPECT_TRUE(c.stream == StreamSpec{});
}

TEST(ConfigIo, ErrorsNameTheField) {
  EXPECT_NE(message_of(R"({"schema": "gemlora.config/1", "train": {"lrr": 1}})").find("train.lrr"), std::string::npos);
  EXPECT_NE(message_of(R"({"schema": "gemlora.config/1", "train": {"lr": "fast"}})").find("train.lr"),
            std::string::npos);
  EXPECT_NE(message_of(R"({"schema": "gemlora.config/1", "train": {"lr": -1}})").find("train.lr"), std::string::npos);
  EXPECT_NE(message_of(R"({"schema": "gemlora.config/1", "train": {"model": {"rank": 0}}})").find("train.model.rank"),
            std::string::npos);
  EXPECT_NE(message_of(R"({"schema": "gemlora.config/1", "stream": {"prior_peak": 2}})").find("stream.prior_peak"),
            std::string::npos);
  EXPECT_NE(message_of(R"({"schema": "gemlora.config/2"})").find("schema"), std::string::npos);
  EXPECT_NE(message_of(R"({"schema": "gemlora.config/1", "train": {"method": "gemm"}})").find("train.method"),
            std::string::npos);
}

TEST(ConfigIo, InvalidJsonReportsPosition) {
  const std::string msg = message_of("{\n  \"schema\": \"gemlora.config/1\",\n  \"train\": {,}\n}");
  EXPECT_NE(msg.find("cfg.json:3:"), std::string::npos) << msg;
}

TEST(ConfigIo, LoadMissingFile) {
  EXPECT_THROW(load_run_config("/nonexistent/gemlora.json"), ConfigError);
}

TEST(ConfigIo, ShippedConfigsParse) {
  for (const char* name : {"default.json", "desk.json"}) {
    const std::string path = std::string(GEMLORA_SOURCE_DIR) + "/configs/" + name;
    EXPECT_NO_THROW(load_run_config(path)) << path;
  }
  EXPECT_TRUE(load_run_config(std::string(GEMLORA_SOURCE_DIR) + "/configs/default.json") == RunConfig{});
}

TEST(ResultDocument, MetricsNullsAndSchema) {
  AccuracyMatrix R(1);
  R.set(1, 0, 0.6);
  const MetricsBlock m = compute_metrics(R, std::vector<double>{}, 4);
  const auto j = to_json(m);
  EXPECT_TRUE(j.at("bwt").is_null());
  EXPECT_TRUE(j.at("fwt").is_null());
  EXPECT_TRUE(j.at("forgetting").is_null());
  EXPECT_TRUE(j.at("mpo").is_null());
  EXPECT_EQ(j.at("avg_acc"), 0.6);

  RunOutput out{R, {}};
  const auto doc = run_result_document(RunConfig{}, out, m);
  EXPECT_EQ(doc.at("schema"), kRunSchema);
  EXPECT_TRUE(run_config_from_json(doc.at("config")) == RunConfig{});
  EXPECT_EQ(doc.at("environment").at("precision"), "float64");
}

TEST(Aggregate, MeanAndStd) {
  std::vector<RunSummary> runs;
  for (double acc : {0.8, 0.9}) {
    MetricsBlock m;
    m.avg_acc = acc;
    m.forgetting = acc - 0.7;
    runs.push_back({"igem", 0, m});
  }
  MetricsBlock other;
  other.avg_acc = 0.5;
  runs.push_back({"naive", 1, other});
  const auto doc = aggregate_document(runs);
  EXPECT_EQ(doc.at("schema"), kAggregateSchema);
  const auto& igem = doc.at("methods").at("igem");
  EXPECT_NEAR(igem.at("avg_acc").at("mean").get<double>(), 0.85, 1e-12);
  EXPECT_NEAR(igem.at("avg_acc").at("std").get<double>(), std::sqrt(0.005), 1e-12);
  EXPECT_EQ(igem.at("avg_acc").at("n"), 2);
  const auto& naive = doc.at("methods").at("naive");
  EXPECT_EQ(naive.at("forgetting").at("n"), 0);
  EXPECT_EQ(naive.at("forgetting").at("missing"), 1);
}

TEST(StepLog, CsvShape) {
  RunLog log;
  StepRecord s;
  s.min_raw_constraint = -0.5;
  log.steps.push_back(s);
  log.steps.push_back(StepRecord{});
  log.curve.push_back({3, 0, {0.5, 0.25}});
  const std::string steps = step_log_csv(log);
  std::istringstream in(steps);
  std::string header, row1, row2;
  std::getline(in, header);
  std::getline(in, row1);
  std::getline(in, row2);
  EXPECT_EQ(header.rfind("step,task,task_step,loss", 0), 0u);
  const auto commas = [](const std::string& t) { return std::count(t.begin(), t.end(), ','); };
  EXPECT_EQ(commas(row1), commas(header));
  EXPECT_EQ(commas(row2), commas(header));
  const std::string curve = curve_csv(log);
  EXPECT_EQ(curve.rfind("step,trained_task,eval_task,accuracy\n", 0), 0u);
  EXPECT_EQ(std::count(curve.begin(), curve.end(), '\n'), 3);
}

TEST(WriteFileAtomic, ReplacesContent) {
  const auto path = (std::filesystem::temp_directory_path() / "gemlora_atomic.txt").string();
  write_file_atomic(path, "one");
  write_file_atomic(path, "two");
  std::ifstream in(path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EXPECT_EQ(text, "two");
  EXPECT_FALSE(std::filesystem::exists(path + ".tmp"));
}

}  // namespace
}  // namespace gemlora
