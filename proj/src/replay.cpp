// Copyright 2026 The gemlora Authors
// SPDX-License-Identifier: Apache-2.0

#include "gemlora/replay.hpp"

#include <algorithm>
#include <iostream>
#include <string>

#include "gemlora/errors.hpp"

namespace gemlora {

namespace {

// Label with the most stored entries; ties go to the lowest label.
int most_populous_label(const std::vector<Example>& items, std::size_t* count_out) {
  std::map<int, std::size_t> counts;
  for (const auto& ex : items) ++counts[ex.label];
  int best = 0;
  std::size_t best_count = 0;
  for (const auto& [label, count] : counts) {
    if (count > best_count) {
      best = label;
      best_count = count;
    }
  }
  if (count_out) *count_out = best_count;
  return best;
}

}  // namespace

ReplayBuffer::ReplayBuffer(const ReplayConfig& config) : config_(config), rng_(mix_seed(config.seed, 0x7265706cULL)) {
  if (config.capacity_per_task == 0) throw ConfigError("patterns_per_exp", "must be positive");
  if (config.total_cap == 0) throw ConfigError("memory_size", "must be positive");
}

void ReplayBuffer::insert(std::size_t task, std::span<const Example> examples) {
  TaskStore& store = per_task_[task];
  for (const auto& ex : examples) {
    insert_one(task, store, ex);
    enforce_total_cap();
  }
}

void ReplayBuffer::insert_one(std::size_t, TaskStore& store, const Example& ex) {
  const std::size_t seen = ++store.seen[ex.label];
  if (store.items.size() < config_.capacity_per_task) {
    store.items.push_back(ex);
    store.sequence.push_back(next_sequence_++);
    ++total_;
    return;
  }

  std::size_t largest = 0;
  most_populous_label(store.items, &largest);
  const auto own = static_cast<std::size_t>(
      std::count_if(store.items.begin(), store.items.end(), [&](const Example& e) { return e.label == ex.label; }));

  if (own < largest) {
    evict_oldest_of_largest_label(store);
    store.items.push_back(ex);
    store.sequence.push_back(next_sequence_++);
    ++total_;
    return;
  }

  // Reservoir step within the label: keep with probability own / seen.
  const auto pick = static_cast<std::size_t>(rng_.index(seen));
  if (pick >= own) return;
  std::size_t nth = 0;
  for (std::size_t slot = 0; slot < store.items.size(); ++slot) {
    if (store.items[slot].label != ex.label) continue;
    if (nth++ == pick) {
      store.items[slot] = ex;
      store.sequence[slot] = next_sequence_++;
      return;
    }
  }
}

void ReplayBuffer::evict_oldest_of_largest_label(TaskStore& store) {
  const int label = most_populous_label(store.items, nullptr);
  std::size_t victim = store.items.size();
  for (std::size_t slot = 0; slot < store.items.size(); ++slot) {
    if (store.items[slot].label != label) continue;
    if (victim == store.items.size() || store.sequence[slot] < store.sequence[victim]) victim = slot;
  }
  store.items.erase(store.items.begin() + static_cast<std::ptrdiff_t>(victim));
  store.sequence.erase(store.sequence.begin() + static_cast<std::ptrdiff_t>(victim));
  --total_;
}

void ReplayBuffer::enforce_total_cap() {
  while (total_ > config_.total_cap) {
    TaskStore* largest = nullptr;
    for (auto& [task, store] : per_task_) {
      if (!largest || store.items.size() > largest->items.size()) largest = &store;
    }
    evict_oldest_of_largest_label(*largest);
  }
}

std::span<const Example> ReplayBuffer::examples(std::size_t task) const {
  const auto it = per_task_.find(task);
  if (it == per_task_.end()) return {};
  return it->second.items;
}

std::size_t ReplayBuffer::size(std::size_t task) const { return examples(task).size(); }

std::vector<std::size_t> ReplayBuffer::tasks() const {
  std::vector<std::size_t> out;
  for (const auto& [task, store] : per_task_) out.push_back(task);
  return out;
}

std::map<int, std::size_t> ReplayBuffer::label_counts(std::size_t task) const {
  std::map<int, std::size_t> counts;
  for (const auto& ex : examples(task)) ++counts[ex.label];
  return counts;
}

nlohmann::json ReplayBuffer::dump() const {
  nlohmann::json doc;
  doc["schema"] = "gemlora.replay/1";
  doc["capacity_per_task"] = config_.capacity_per_task;
  doc["total_cap"] = config_.total_cap;
  doc["tasks"] = nlohmann::json::array();
  for (const auto& [task, store] : per_task_) {
    nlohmann::json t;
    t["task"] = task;
    t["examples"] = nlohmann::json::array();
    for (std::size_t slot = 0; slot < store.items.size(); ++slot) {
      const auto& ex = store.items[slot];
      t["examples"].push_back({{"label", ex.label},
                               {"sequence", store.sequence[slot]},
                               {"x", std::vector<double>(ex.x.data(), ex.x.data() + ex.x.size())}});
    }
    doc["tasks"].push_back(std::move(t));
  }
  return doc;
}

Vector task_gradient(const ReplayBuffer& buffer, std::size_t task, const TinyMlp& model) {
  const auto items = buffer.examples(task);
  if (items.empty()) throw ContractError("task_gradient: replay buffer for task " + std::to_string(task) + " is empty");
  return backward(model, items);
}

ConstraintMatrix build_constraint_matrix(const ReplayBuffer& buffer, const TinyMlp& model,
                                         std::span<const std::size_t> tasks, bool normalize) {
  std::vector<Vector> rows;
  rows.reserve(tasks.size());
  for (const std::size_t task : tasks) rows.push_back(task_gradient(buffer, task, model));
  ConstraintMatrix G = ConstraintMatrix::from_rows(rows, model.adapter_dim(), normalize);
  for (const std::size_t dropped : G.dropped_rows()) {
    std::cerr << "warning: adapter gradient of past task " << tasks[dropped]
              << " has zero norm; constraint dropped\n";
  }
  return G;
}

}  // namespace gemlora
