// Copyright 2026 The gemlora Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>

#include "gemlora/errors.hpp"
#include "gemlora/projector.hpp"
#include "gemlora/replay.hpp"
#include "gemlora/trainer.hpp"
#include "support/oracles.hpp"

namespace gemlora {
namespace {

Dataset labeled(std::initializer_list<int> labels, std::size_t dim = 32) {
  Dataset out;
  double v = 0.0;
  for (int l : labels) {
    out.push_back({Vector::Constant(static_cast<Eigen::Index>(dim), v), l});
    v += 0.1;
  }
  return out;
}

TEST(ReplayBuffer, BalancesLabels) {
  ReplayBuffer buf({4, 150, 0});
  buf.insert(0, labeled({0, 0, 0, 0, 1, 1, 1, 1}));
  const auto counts = buf.label_counts(0);
  EXPECT_EQ(counts, (std::map<int, std::size_t>{{0, 2}, {1, 2}}));
}

TEST(ReplayBuffer, BelowCapacityKeepsAll) {
  ReplayBuffer buf({10, 150, 0});
  const auto data = labeled({0, 1, 2, 2, 3});
  buf.insert(1, data);
  ASSERT_EQ(buf.size(1), 5u);
  for (std::size_t i = 0; i < data.size(); ++i) EXPECT_EQ(buf.examples(1)[i].x, data[i].x);
  EXPECT_EQ(buf.size(0), 0u);
  EXPECT_EQ(buf.total_size(), 5u);
}

TEST(ReplayBuffer, DeterministicUnderSeed) {
  std::mt19937_64 gen(1);
  const auto stream = oracle::random_batch(gen, 500, 32, 4);
  ReplayBuffer a({20, 50, 3}), b({20, 50, 3});
  for (std::size_t t = 0; t < 3; ++t) {
    std::span<const Example> part(stream.data() + t * 150, 150);
    a.insert(t, part);
    b.insert(t, part);
  }
  EXPECT_EQ(a.dump(), b.dump());
}

TEST(ReplayBuffer, CapsAndBalanceUnderLongStreams) {
  std::mt19937_64 gen(2);
  const auto stream = oracle::random_batch(gen, 900, 32, 4);
  ReplayBuffer buf({100, 150, 0});
  for (std::size_t t = 0; t < 3; ++t) {
    buf.insert(t, std::span<const Example>(stream.data() + t * 300, 300));
    std::size_t total = 0;
    for (std::size_t k : buf.tasks()) {
      EXPECT_LE(buf.size(k), 100u);
      total += buf.size(k);
      std::size_t lo = SIZE_MAX, hi = 0;
      for (const auto& [label, n] : buf.label_counts(k)) {
        lo = std::min(lo, n);
        hi = std::max(hi, n);
      }
      EXPECT_LE(hi - lo, 1u) << "task " << k;
    }
    EXPECT_EQ(total, buf.total_size());
    EXPECT_LE(total, 150u);
  }
  EXPECT_THROW(ReplayBuffer({0, 10, 0}), ConfigError);
}

TEST(TaskGradient, MeanOfExamples) {
  TinyMlp model = oracle::perturbed_model(ModelShape{}, 4);
  std::mt19937_64 gen(4);
  const auto two = oracle::random_batch(gen, 2, 32, 4);

  ReplayBuffer single({10, 10, 0});
  single.insert(0, std::span<const Example>(two.data(), 1));
  EXPECT_LE((task_gradient(single, 0, model) - backward(model, std::span<const Example>(two.data(), 1))).norm(),
            1e-12);

  ReplayBuffer same({10, 10, 0});
  Dataset twice{two[0], two[0]};
  same.insert(0, twice);
  EXPECT_LE((task_gradient(same, 0, model) - backward(model, std::span<const Example>(two.data(), 1))).norm(),
            1e-12);

  ReplayBuffer both({10, 10, 0});
  both.insert(0, two);
  const Vector mean = 0.5 * (backward(model, std::span<const Example>(two.data(), 1)) +
                             backward(model, std::span<const Example>(two.data() + 1, 1)));
  EXPECT_LE((task_gradient(both, 0, model) - mean).norm(), 1e-12);

  EXPECT_THROW(task_gradient(both, 5, model), ContractError);
}

TEST(BuildConstraintMatrix, RowsAndNormalization) {
  TinyMlp model = oracle::perturbed_model(ModelShape{}, 5);
  std::mt19937_64 gen(5);
  ReplayBuffer buf({20, 60, 0});
  for (std::size_t t = 0; t < 3; ++t) buf.insert(t, oracle::random_batch(gen, 20, 32, 4));
  const std::vector<std::size_t> one{0};
  const auto G1 = build_constraint_matrix(buf, model, one, false);
  ASSERT_EQ(G1.rows(), 1u);
  EXPECT_LE((G1.data().row(0).transpose() - task_gradient(buf, 0, model)).norm(), 1e-15);

  const std::vector<std::size_t> all{0, 1, 2};
  const auto raw = build_constraint_matrix(buf, model, all, false);
  const auto unit = build_constraint_matrix(buf, model, all, true);
  EXPECT_EQ(unit.stored_floats(), 3u * model.adapter_dim());
  for (Eigen::Index i = 0; i < 3; ++i) EXPECT_NEAR(unit.data().row(i).norm(), 1.0, 1e-9);

  // Row scaling leaves the cone, hence the exact projection, unchanged.
  const Vector g = backward(model, oracle::random_batch(gen, 8, 32, 4));
  const auto a = exact_qp_project(g, raw);
  const auto b = exact_qp_project(g, unit);
  EXPECT_LE((a.projected_gradient - b.projected_gradient).norm(), 1e-9 * (1.0 + g.norm()));
}

TEST(BuildConstraintMatrix, RebuiltAfterStepDiffers) {
  TinyMlp model = oracle::perturbed_model(ModelShape{}, 6);
  std::mt19937_64 gen(6);
  ReplayBuffer buf({20, 60, 0});
  buf.insert(0, oracle::random_batch(gen, 20, 32, 4));
  const std::vector<std::size_t> tasks{0};
  const auto stale = build_constraint_matrix(buf, model, tasks, true);
  const auto batch = oracle::random_batch(gen, 8, 32, 4);
  model.set_adapter_params(model.adapter_params() - 0.05 * backward(model, batch));
  const auto fresh = build_constraint_matrix(buf, model, tasks, true);
  EXPECT_GT((stale.data() - fresh.data()).norm(), 1e-8);
}

}  // namespace
}  // namespace gemlora
