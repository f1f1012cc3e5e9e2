// Copyright 2026 The gemlora Authors
// SPDX-License-Identifier: Apache-2.0

#include "gemlora/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "gemlora/errors.hpp"

namespace gemlora {

AccuracyMatrix::AccuracyMatrix(std::size_t tasks) : tasks_(tasks) {
  if (tasks == 0) throw ContractError("AccuracyMatrix: need at least one task");
  values_ = Matrix::Zero(static_cast<Eigen::Index>(tasks + 1), static_cast<Eigen::Index>(tasks));
}

double AccuracyMatrix::at(std::size_t row, std::size_t task) const {
  if (row > tasks_ || task >= tasks_) throw DimensionError("AccuracyMatrix: index out of range");
  return values_(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(task));
}

void AccuracyMatrix::set(std::size_t row, std::size_t task, double value) {
  if (row > tasks_ || task >= tasks_) throw DimensionError("AccuracyMatrix: index out of range");
  if (!(value >= 0.0 && value <= 1.0)) throw ContractError("AccuracyMatrix: accuracy " + std::to_string(value) + " outside [0, 1]");
  values_(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(task)) = value;
}

void AccuracyMatrix::set_row(std::size_t row, std::span<const double> values) {
  if (values.size() != tasks_) throw DimensionError("AccuracyMatrix: row length mismatch");
  for (std::size_t i = 0; i < tasks_; ++i) set(row, i, values[i]);
}

std::vector<double> AccuracyMatrix::row(std::size_t row) const {
  std::vector<double> out(tasks_);
  for (std::size_t i = 0; i < tasks_; ++i) out[i] = at(row, i);
  return out;
}

Vector AccuracyMatrix::baseline() const {
  if (custom_baseline_.size() > 0) return custom_baseline_;
  return values_.row(0).transpose();
}

void AccuracyMatrix::set_baseline(const Vector& b) {
  if (static_cast<std::size_t>(b.size()) != tasks_) throw DimensionError("AccuracyMatrix: baseline length mismatch");
  custom_baseline_ = b;
}

bool AccuracyMatrix::operator==(const AccuracyMatrix& other) const {
  return tasks_ == other.tasks_ && values_ == other.values_ && custom_baseline_.size() == other.custom_baseline_.size() &&
         (custom_baseline_.size() == 0 || custom_baseline_ == other.custom_baseline_);
}

double avg_acc(const AccuracyMatrix& R) {
  const std::size_t T = R.tasks();
  double sum = 0.0;
  for (std::size_t i = 0; i < T; ++i) sum += R.at(T, i);
  return sum / static_cast<double>(T);
}

std::optional<double> bwt(const AccuracyMatrix& R) {
  const std::size_t T = R.tasks();
  if (T < 2) return std::nullopt;
  double sum = 0.0;
  for (std::size_t i = 1; i < T; ++i) sum += R.at(T, i - 1) - R.at(i, i - 1);
  return sum / static_cast<double>(T - 1);
}

std::optional<double> fwt(const AccuracyMatrix& R) { return fwt(R, R.baseline()); }

std::optional<double> fwt(const AccuracyMatrix& R, const Vector& baseline) {
  const std::size_t T = R.tasks();
  if (T < 2) return std::nullopt;
  if (static_cast<std::size_t>(baseline.size()) != T) throw DimensionError("fwt: baseline length mismatch");
  double sum = 0.0;
  for (std::size_t i = 2; i <= T; ++i) sum += R.at(i - 1, i - 1) - baseline[static_cast<Eigen::Index>(i - 1)];
  return sum / static_cast<double>(T - 1);
}

std::optional<double> forgetting(const AccuracyMatrix& R) {
  const std::size_t T = R.tasks();
  if (T < 2) return std::nullopt;
  double sum = 0.0;
  for (std::size_t i = 1; i < T; ++i) {
    double best = R.at(1, i - 1);
    for (std::size_t t = 2; t <= T - 1; ++t) best = std::max(best, R.at(t, i - 1));
    sum += best - R.at(T, i - 1);
  }
  return sum / static_cast<double>(T - 1);
}

std::optional<double> mpo(std::span<const double> durations) {
  if (durations.empty()) return std::nullopt;
  double sum = 0.0;
  for (const double d : durations) {
    if (!(d >= 0.0)) throw ContractError("mpo: negative or non-finite duration");
    sum += d;
  }
  return sum / static_cast<double>(durations.size());
}

bool peaks_at_own_checkpoint(const AccuracyMatrix& R) {
  const std::size_t T = R.tasks();
  for (std::size_t i = 1; i < T; ++i) {
    const double own = R.at(i, i - 1);
    for (std::size_t t = 1; t <= T - 1; ++t) {
      if (R.at(t, i - 1) > own) return false;
    }
  }
  return true;
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd out;
  out.n = values.size();
  if (values.empty()) return out;
  double sum = 0.0;
  for (const double v : values) sum += v;
  out.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double sq = 0.0;
    for (const double v : values) sq += (v - out.mean) * (v - out.mean);
    out.std = std::sqrt(sq / static_cast<double>(values.size() - 1));
  }
  return out;
}

MetricsBlock compute_metrics(const AccuracyMatrix& R, std::span<const double> projection_times, std::size_t n_classes) {
  MetricsBlock m;
  m.avg_acc = avg_acc(R);
  m.bwt = bwt(R);
  m.fwt = fwt(R);
  if (n_classes > 0) {
    m.fwt_chance = fwt(R, Vector::Constant(static_cast<Eigen::Index>(R.tasks()), 1.0 / static_cast<double>(n_classes)));
  }
  m.forgetting = forgetting(R);
  m.mpo = mpo(projection_times);
  m.projections = projection_times.size();
  return m;
}

}  // namespace gemlora
