// Copyright 2026 The gemlora Authors
// SPDX-License-Identifier: Apache-2.0
//
// Domain-incremental benchmark streams: class-conditional Gaussians whose class
// priors change from one experience to the next, plus CSV ingestion for
// externally featurized data.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "gemlora/adapter_model.hpp"

namespace gemlora {

struct StreamSpec {
  std::size_t n_classes = 4;
  std::size_t n_experiences = 3;
  std::size_t feature_dim = 32;
  std::size_t samples_per_experience = 1500;
  // Empty: experience e puts prior_peak on class e mod n_classes and spreads
  // the rest uniformly.
  std::vector<std::vector<double>> prior_schedule;
  double prior_peak = 0.7;
  // Class means are drawn once from geometry_seed (fixed across runs) at
  // distance class_separation from the origin; features add isotropic noise
  // of standard deviation noise_scale.
  double class_separation = 2.5;
  double noise_scale = 1.0;
  std::uint64_t geometry_seed = 1234;
  // Drives sampling, 80/20 splits, and the experience order.
  std::uint64_t seed = 0;

  bool operator==(const StreamSpec&) const = default;
};

struct ExperienceSplit {
  // Position in the training order.
  std::size_t experience_id = 0;
  // Index into prior_schedule this experience was drawn from (synthetic only).
  std::size_t prior_index = 0;
  // Global index of local row 0; rows of different experiences never overlap.
  std::size_t row_offset = 0;
  Dataset train;
  Dataset test;
  // Local row index (within the experience) of each train / test example.
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> test_rows;

  std::size_t rows() const noexcept { return train.size() + test.size(); }
};

using Stream = std::vector<ExperienceSplit>;

// Resolved prior for every experience (validates an explicit schedule).
std::vector<std::vector<double>> resolve_prior_schedule(const StreamSpec& spec);

// Throws ConfigError naming the first invalid stream field.
void validate(const StreamSpec& spec);

// Class means, one row per class.
Matrix class_means(const StreamSpec& spec);

// Experiences in a seed-shuffled order, each split 80/20.
Stream generate_stream(const StreamSpec& spec);

// Uniform-prior sample from the same class geometry, disjoint from every
// stream row; used to train the frozen base weights.
Dataset generate_pretrain_pool(const StreamSpec& spec, std::size_t n);

// Number of test rows for an experience of n rows: floor(n / 5), at least 1.
std::size_t test_count(std::size_t n);

// Test membership for local rows 0..n-1: the test_count(n) rows with the
// smallest key hash(seed, experience_id, row). Returns a 0/1 mask.
std::vector<bool> split_mask(std::uint64_t seed, std::size_t experience_id, std::size_t n);

struct CsvSchema {
  std::size_t n_features = 0;
  std::size_t n_classes = 0;
};

// Reads `f0,...,f{n-1},label,experience` rows. Experiences come out in
// ascending id order, each split 80/20 with `seed`. Throws DataError for an
// empty file, a bad header, a malformed row (with line number and column), or
// a label outside [0, n_classes).
Stream ingest_csv(const std::string& path, const CsvSchema& schema, std::uint64_t seed);

// Writes a stream in the same schema, each experience's rows in local row
// order, so that ingest_csv with the same seed reproduces the splits.
void write_stream_csv(const Stream& stream, const std::string& path);

}  // namespace gemlora
