// Copyright 2026 The gemlora Authors
// SPDX-License-Identifier: Apache-2.0
//
// JSON config parsing and result documents. Every document carries a
// "schema" string; see docs/formats.md.

#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gemlora/datagen.hpp"
#include "gemlora/metrics.hpp"
#include "gemlora/trainer.hpp"

namespace gemlora {

inline constexpr const char* kConfigSchema = "gemlora.config/1";
inline constexpr const char* kRunSchema = "gemlora.run/1";
inline constexpr const char* kAggregateSchema = "gemlora.aggregate/1";
inline constexpr const char* kBenchSchema = "gemlora.bench/1";
inline constexpr const char* kVerifySchema = "gemlora.verify/1";
inline constexpr const char* kVersion = "0.1.0";

struct RunConfig {
  TrainConfig train;
  StreamSpec stream;
  // When set, experiences come from this CSV instead of the synthetic stream.
  std::optional<std::string> data_csv;

  bool operator==(const RunConfig&) const = default;
};

nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const StreamSpec& s);
nlohmann::json to_json(const RunConfig& c);

// Strict: unknown keys and wrong types raise ConfigError naming the dotted
// field path. Missing keys keep their defaults.
TrainConfig train_config_from_json(const nlohmann::json& j);
StreamSpec stream_spec_from_json(const nlohmann::json& j);
RunConfig run_config_from_json(const nlohmann::json& j);

// Parses JSON text; syntax errors are reported as "<source>:<line>:<col>".
RunConfig parse_run_config(const std::string& text, const std::string& source = "<config>");
RunConfig load_run_config(const std::string& path);

nlohmann::json environment_fingerprint();
nlohmann::json to_json(const AccuracyMatrix& R);
nlohmann::json to_json(const MetricsBlock& m);

// Self-contained result of one run: the config echo (with the run's seed)
// reproduces the accuracy matrix.
nlohmann::json run_result_document(const RunConfig& config, const RunOutput& output, const MetricsBlock& metrics);

struct RunSummary {
  std::string method;
  std::uint64_t seed = 0;
  MetricsBlock metrics;
};

nlohmann::json aggregate_document(std::span<const RunSummary> runs);

// One row per training step.
std::string step_log_csv(const RunLog& log);
// One row per (curve point, task); empty when no curve was recorded.
std::string curve_csv(const RunLog& log);

// Writes to "<path>.tmp" then renames over `path`.
void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace gemlora
