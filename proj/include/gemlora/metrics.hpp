// Copyright 2026 The gemlora Authors
// SPDX-License-Identifier: Apache-2.0
//
// Continual-learning metrics over an accuracy matrix R of shape (T+1) x T:
// row 0 holds the accuracy of every task before any continual training, row j
// (1..T) the accuracy after training through task j. Tasks are 1-based in the
// formulas and 0-based as column indices.
//
//   AvgAcc     = 1/T       sum_i          R[T][i]
//   BWT        = 1/(T-1)   sum_{i<T}      R[T][i] - R[i][i]
//   FWT        = 1/(T-1)   sum_{i>=2}     R[i-1][i] - b[i]
//   Forgetting = 1/(T-1)   sum_{i<T}      max_{1<=t<=T-1} R[t][i] - R[T][i]
//   MPO        = mean projection wall time

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "gemlora/linalg.hpp"

namespace gemlora {

class AccuracyMatrix {
 public:
  explicit AccuracyMatrix(std::size_t tasks);

  std::size_t tasks() const noexcept { return tasks_; }
  // row in [0, T], task in [0, T).
  double at(std::size_t row, std::size_t task) const;
  void set(std::size_t row, std::size_t task, double value);
  void set_row(std::size_t row, std::span<const double> values);
  std::vector<double> row(std::size_t row) const;

  // FWT baseline b_i; defaults to row 0.
  Vector baseline() const;
  void set_baseline(const Vector& b);
  bool has_custom_baseline() const noexcept { return custom_baseline_.size() > 0; }

  const Matrix& values() const noexcept { return values_; }

  bool operator==(const AccuracyMatrix& other) const;

 private:
  std::size_t tasks_;
  Matrix values_;
  Vector custom_baseline_;
};

double avg_acc(const AccuracyMatrix& R);
std::optional<double> bwt(const AccuracyMatrix& R);
std::optional<double> fwt(const AccuracyMatrix& R);
std::optional<double> fwt(const AccuracyMatrix& R, const Vector& baseline);
std::optional<double> forgetting(const AccuracyMatrix& R);
std::optional<double> mpo(std::span<const double> durations);

// True when every task i < T reaches its best pre-final accuracy at row i,
// in which case Forgetting = -BWT.
bool peaks_at_own_checkpoint(const AccuracyMatrix& R);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single value
  std::size_t n = 0;
};

MeanStd mean_std(std::span<const double> values);

struct MetricsBlock {
  double avg_acc = 0.0;
  std::optional<double> bwt;
  std::optional<double> fwt;         // baseline = measured row 0
  std::optional<double> fwt_chance;  // baseline = 1 / n_classes
  std::optional<double> forgetting;
  std::optional<double> mpo;
  std::size_t projections = 0;
};

MetricsBlock compute_metrics(const AccuracyMatrix& R, std::span<const double> projection_times, std::size_t n_classes);

}  // namespace gemlora
