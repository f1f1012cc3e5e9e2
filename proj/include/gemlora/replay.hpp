// Copyright 2026 The gemlora Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include <json.hpp>

#include "gemlora/adapter_model.hpp"
#include "gemlora/projector.hpp"
#include "gemlora/rng.hpp"

namespace gemlora {

struct ReplayConfig {
  std::size_t capacity_per_task = 100;  // patterns_per_exp
  std::size_t total_cap = 150;          // memory_size
  std::uint64_t seed = 0;
};

// Per-task episodic memory with label balancing.
//
// Within a task, a full buffer admits an example of an under-represented label
// by evicting the oldest entry of the most populous label; for a label that is
// already among the most populous, reservoir sampling within that label
// decides whether it replaces one of its own entries. Across tasks, whenever
// the total exceeds total_cap the oldest entry of the most populous label of
// the largest task is evicted (ties: lowest task index, lowest label).
class ReplayBuffer {
 public:
  explicit ReplayBuffer(const ReplayConfig& config);

  void insert(std::size_t task, std::span<const Example> examples);

  std::span<const Example> examples(std::size_t task) const;
  std::size_t size(std::size_t task) const;
  std::size_t total_size() const noexcept { return total_; }
  std::vector<std::size_t> tasks() const;
  std::map<int, std::size_t> label_counts(std::size_t task) const;
  const ReplayConfig& config() const noexcept { return config_; }

  // Audit dump: every stored example per task, in slot order.
  nlohmann::json dump() const;

 private:
  struct TaskStore {
    std::vector<Example> items;
    std::vector<std::uint64_t> sequence;  // insertion stamp per slot
    std::map<int, std::size_t> seen;      // examples offered per label
  };

  void insert_one(std::size_t task, TaskStore& store, const Example& ex);
  void evict_oldest_of_largest_label(TaskStore& store);
  void enforce_total_cap();

  ReplayConfig config_;
  std::map<std::size_t, TaskStore> per_task_;
  Rng rng_;
  std::uint64_t next_sequence_ = 0;
  std::size_t total_ = 0;
};

// Mean adapter gradient over the task's whole buffer at the model's current phi.
Vector task_gradient(const ReplayBuffer& buffer, std::size_t task, const TinyMlp& model);

// Row k is task_gradient(tasks[k]), optionally unit-normalized. Zero rows are
// dropped with a warning on stderr.
ConstraintMatrix build_constraint_matrix(const ReplayBuffer& buffer, const TinyMlp& model,
                                         std::span<const std::size_t> tasks, bool normalize);

}  // namespace gemlora
