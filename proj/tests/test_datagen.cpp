// Copyright 2026 The gemlora Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "gemlora/datagen.hpp"
#include "gemlora/errors.hpp"
#include "gemlora/trainer.hpp"

namespace gemlora {
namespace {

namespace fs = std::filesystem;

std::string temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "gemlora_tests";
  fs::create_directories(dir);
  return (dir / name).string();
}

void write(const std::string& path, const std::string& text) {
  std::ofstream(path) << text;
}

TEST(GenerateStream, UniformPriorsWithinThreeSigma) {
  StreamSpec spec;
  spec.samples_per_experience = 4000;
  spec.prior_schedule.assign(3, std::vector<double>(4, 0.25));
  const Stream stream = generate_stream(spec);
  for (const auto& split : stream) {
    std::vector<double> counts(4, 0.0);
    for (const auto& ex : split.train) counts[static_cast<std::size_t>(ex.label)] += 1.0;
    for (const auto& ex : split.test) counts[static_cast<std::size_t>(ex.label)] += 1.0;
    const double n = static_cast<double>(split.rows());
    const double sigma = std::sqrt(n * 0.25 * 0.75);
    for (double c : counts) EXPECT_LE(std::abs(c - 0.25 * n), 3.0 * sigma);
  }
}

TEST(GenerateStream, PointMassPrior) {
  StreamSpec spec;
  spec.prior_schedule = {{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 0.5, 0.5}};
  const Stream stream = generate_stream(spec);
  for (const auto& split : stream) {
    if (split.prior_index != 0) continue;
    for (const auto& ex : split.train) EXPECT_EQ(ex.label, 0);
    for (const auto& ex : split.test) EXPECT_EQ(ex.label, 0);
  }
}

TEST(GenerateStream, DeterministicAndSeedSensitive) {
  StreamSpec spec;
  spec.seed = 5;
  const Stream a = generate_stream(spec), b = generate_stream(spec);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t e = 0; e < a.size(); ++e) {
    ASSERT_EQ(a[e].train.size(), b[e].train.size());
    EXPECT_EQ(a[e].prior_index, b[e].prior_index);
    for (std::size_t i = 0; i < a[e].train.size(); ++i) {
      EXPECT_EQ(a[e].train[i].x, b[e].train[i].x);
      EXPECT_EQ(a[e].train[i].label, b[e].train[i].label);
    }
  }
  spec.seed = 6;
  const Stream c = generate_stream(spec);
  EXPECT_NE(a[0].train[0].x, c[0].train[0].x);
}

TEST(GenerateStream, DisjointRowsAndSplits) {
  const Stream stream = generate_stream(StreamSpec{});
  std::set<std::size_t> seen;
  for (const auto& split : stream) {
    EXPECT_EQ(split.test.size(), test_count(split.rows()));
    std::set<std::size_t> local(split.train_rows.begin(), split.train_rows.end());
    for (std::size_t r : split.test_rows) EXPECT_EQ(local.count(r), 0u);
    local.insert(split.test_rows.begin(), split.test_rows.end());
    EXPECT_EQ(local.size(), split.rows());
    for (std::size_t r : local) EXPECT_TRUE(seen.insert(split.row_offset + r).second);
  }
}

TEST(GenerateStream, DefaultScheduleSumsToOne) {
  for (const auto& p : resolve_prior_schedule(StreamSpec{})) {
    double sum = 0.0;
    for (double v : p) sum += v;
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
  StreamSpec bad;
  bad.prior_schedule = {{0.5, 0.6, 0, 0}, {0.25, 0.25, 0.25, 0.25}, {0.25, 0.25, 0.25, 0.25}};
  EXPECT_THROW(resolve_prior_schedule(bad), ConfigError);
}

TEST(SplitMask, PureFunction) {
  EXPECT_EQ(split_mask(3, 1, 50), split_mask(3, 1, 50));
  EXPECT_NE(split_mask(3, 1, 50), split_mask(3, 2, 50));
  EXPECT_EQ(test_count(5), 1u);
  EXPECT_EQ(test_count(4), 1u);
  EXPECT_EQ(test_count(10), 2u);
  EXPECT_EQ(test_count(1500), 300u);
}

// A model tuned on one experience scores lower zero-shot on the next one.
TEST(GenerateStream, DriftIsRealized) {
  int lower = 0;
  const std::vector<std::uint64_t> seeds{0, 2, 5, 7, 11};
  for (std::uint64_t seed : seeds) {
    TrainConfig config;
    config.seed = seed;
    config.lr = 0.05;
    StreamSpec spec;
    spec.seed = seed;
    const Stream stream = generate_stream(spec);
    TinyMlp model = make_base_model(config, generate_pretrain_pool(spec, config.pretrain_pool));
    const Dataset& train = stream[0].train;
    for (std::size_t epoch = 0; epoch < 3; ++epoch) {
      for (std::size_t b = 0; b < train.size(); b += 32) {
        const std::span<const Example> batch(train.data() + b, std::min<std::size_t>(32, train.size() - b));
        model.set_adapter_params(model.adapter_params() - config.lr * backward(model, batch));
      }
    }
    if (accuracy(model, stream[1].test) < accuracy(model, stream[0].test)) ++lower;
  }
  EXPECT_EQ(lower, static_cast<int>(seeds.size()));
}

TEST(IngestCsv, TenRowsTwoExperiences) {
  const std::string path = temp_path("ten.csv");
  std::string text = "f0,f1,label,experience\n";
  for (int i = 0; i < 10; ++i) {
    text += std::to_string(i * 0.5) + "," + std::to_string(-i) + "," + std::to_string(i % 2) + "," +
            std::to_string(i / 5) + "\n";
  }
  write(path, text);
  const Stream s = ingest_csv(path, {2, 2}, 0);
  ASSERT_EQ(s.size(), 2u);
  for (const auto& split : s) {
    EXPECT_EQ(split.train.size(), 4u);
    EXPECT_EQ(split.test.size(), 1u);
  }
  const Stream again = ingest_csv(path, {2, 2}, 0);
  EXPECT_EQ(s[0].test_rows, again[0].test_rows);
}

TEST(IngestCsv, Errors) {
  EXPECT_THROW(ingest_csv(temp_path("does_not_exist.csv"), {2, 2}, 0), DataError);

  const std::string empty = temp_path("empty.csv");
  write(empty, "");
  EXPECT_THROW(ingest_csv(empty, {2, 2}, 0), DataError);

  const std::string bad_cell = temp_path("bad_cell.csv");
  write(bad_cell, "f0,f1,label,experience\n1,2,0,0\n1,abc,1,0\n");
  try {
    ingest_csv(bad_cell, {2, 2}, 0);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("f1"), std::string::npos) << e.what();
  }

  const std::string bad_label = temp_path("bad_label.csv");
  write(bad_label, "f0,f1,label,experience\n1,2,5,0\n");
  EXPECT_THROW(ingest_csv(bad_label, {2, 2}, 0), DataError);

  const std::string short_row = temp_path("short_row.csv");
  write(short_row, "f0,f1,label,experience\n1,2,0\n");
  EXPECT_THROW(ingest_csv(short_row, {2, 2}, 0), DataError);
}

TEST(IngestCsv, DumpReloadRoundTrip) {
  StreamSpec spec;
  spec.samples_per_experience = 50;
  spec.feature_dim = 3;
  const Stream stream = generate_stream(spec);
  const std::string path = temp_path("dump.csv");
  write_stream_csv(stream, path);
  const Stream back = ingest_csv(path, {3, 4}, spec.seed);
  ASSERT_EQ(back.size(), stream.size());
  for (std::size_t e = 0; e < stream.size(); ++e) {
    EXPECT_EQ(back[e].rows(), stream[e].rows());
    EXPECT_EQ(back[e].test.size(), stream[e].test.size());
  }
}

}  // namespace
}  // namespace gemlora
