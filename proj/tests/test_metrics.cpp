// Copyright 2026 The gemlora Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>
#include <vector>

#include "gemlora/errors.hpp"
#include "gemlora/metrics.hpp"

namespace gemlora {
namespace {

// Row 0 baseline, then one row per trained task.
AccuracyMatrix two_task() {
  AccuracyMatrix R(2);
  const double r0[] = {0.25, 0.25}, r1[] = {0.9, 0.5}, r2[] = {0.8, 0.85};
  R.set_row(0, r0);
  R.set_row(1, r1);
  R.set_row(2, r2);
  return R;
}

constexpr double kTol = 1e-12;

TEST(Metrics, TwoTaskFixture) {
  const AccuracyMatrix R = two_task();
  EXPECT_NEAR(avg_acc(R), 0.825, kTol);
  EXPECT_NEAR(*bwt(R), -0.1, kTol);
  EXPECT_NEAR(*fwt(R), 0.25, kTol);
  EXPECT_NEAR(*forgetting(R), 0.1, kTol);
  EXPECT_TRUE(peaks_at_own_checkpoint(R));
}

TEST(Metrics, TrivialCases) {
  AccuracyMatrix ones(3);
  for (std::size_t r = 0; r <= 3; ++r) {
    for (std::size_t t = 0; t < 3; ++t) ones.set(r, t, 1.0);
  }
  EXPECT_EQ(avg_acc(ones), 1.0);
  EXPECT_EQ(*bwt(ones), 0.0);
  EXPECT_EQ(*fwt(ones), 0.0);
  EXPECT_EQ(*forgetting(ones), 0.0);

  AccuracyMatrix single(1);
  single.set(1, 0, 0.6);
  EXPECT_EQ(avg_acc(single), 0.6);
  EXPECT_FALSE(bwt(single).has_value());
  EXPECT_FALSE(fwt(single).has_value());
  EXPECT_FALSE(forgetting(single).has_value());
}

TEST(Metrics, FwtWithChanceBaseline) {
  AccuracyMatrix R(2);
  R.set(1, 1, 0.5);
  Vector chance = Vector::Constant(2, 0.25);
  EXPECT_NEAR(*fwt(R, chance), 0.25, kTol);
  R.set_baseline(chance);
  EXPECT_TRUE(R.has_custom_baseline());
  EXPECT_NEAR(*fwt(R), 0.25, kTol);
  EXPECT_THROW(fwt(R, Vector::Zero(3)), DimensionError);
}

TEST(Metrics, ForgettingIsNegativeBwtWhenPeaksAreOwn) {
  std::mt19937_64 gen(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int checked = 0;
  for (int trial = 0; trial < 2000 && checked < 100; ++trial) {
    const std::size_t T = 2 + static_cast<std::size_t>(trial % 4);
    AccuracyMatrix R(T);
    for (std::size_t r = 0; r <= T; ++r) {
      for (std::size_t t = 0; t < T; ++t) R.set(r, t, u(gen));
    }
    if (!peaks_at_own_checkpoint(R)) continue;
    EXPECT_NEAR(*forgetting(R), -*bwt(R), kTol);
    ++checked;
  }
  EXPECT_EQ(checked, 100);
}

TEST(Metrics, AvgAccInvariantUnderRelabeling) {
  AccuracyMatrix R(3), P(3);
  const double rows[4][3] = {{0.2, 0.3, 0.1}, {0.9, 0.4, 0.2}, {0.7, 0.8, 0.3}, {0.6, 0.7, 0.95}};
  const std::size_t perm[3] = {2, 0, 1};
  for (std::size_t r = 0; r <= 3; ++r) {
    for (std::size_t t = 0; t < 3; ++t) {
      R.set(r, t, rows[r][t]);
      P.set(r, perm[t], rows[r][t]);
    }
  }
  EXPECT_NEAR(avg_acc(R), avg_acc(P), kTol);
}

TEST(Metrics, Mpo) {
  const std::vector<double> two{1.0, 3.0};
  EXPECT_EQ(*mpo(two), 2.0);
  const std::vector<double> one{0.5};
  EXPECT_EQ(*mpo(one), 0.5);
  EXPECT_FALSE(mpo(std::vector<double>{}).has_value());
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> u(0.0, 1e-3);
  std::vector<double> many(1000);
  long double sum = 0;
  for (auto& v : many) {
    v = u(gen);
    sum += v;
  }
  const double brute = static_cast<double>(sum / 1000.0L);
  EXPECT_LE(std::abs(*mpo(many) - brute), 1e-15 * brute);
  EXPECT_THROW(mpo(std::vector<double>{-1.0}), ContractError);
}

TEST(Metrics, MeanStd) {
  const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
  const MeanStd s = mean_std(v);
  EXPECT_DOUBLE_EQ(s.mean, 2.5);
  EXPECT_NEAR(s.std, std::sqrt(5.0 / 3.0), 1e-15);
  EXPECT_EQ(s.n, 4u);
  EXPECT_EQ(mean_std(std::vector<double>{7.0}).std, 0.0);
}

TEST(Metrics, ComputeMetricsBlock) {
  const std::vector<double> times{0.1, 0.3};
  const MetricsBlock m = compute_metrics(two_task(), times, 4);
  EXPECT_NEAR(m.avg_acc, 0.825, kTol);
  EXPECT_NEAR(*m.fwt_chance, 0.25, kTol);
  EXPECT_NEAR(*m.mpo, 0.2, kTol);
  EXPECT_EQ(m.projections, 2u);
  const MetricsBlock none = compute_metrics(two_task(), std::vector<double>{}, 4);
  EXPECT_FALSE(none.mpo.has_value());
}

TEST(AccuracyMatrix, Validation) {
  AccuracyMatrix R(2);
  EXPECT_THROW(R.set(3, 0, 0.5), DimensionError);
  EXPECT_THROW(R.set(0, 2, 0.5), DimensionError);
  EXPECT_THROW(R.set(0, 0, 1.5), ContractError);
  EXPECT_THROW(AccuracyMatrix(0), ContractError);
}

}  // namespace
}  // namespace gemlora
