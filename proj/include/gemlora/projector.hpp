// Copyright 2026 The gemlora Authors
// SPDX-License-Identifier: Apache-2.0
//
// Gradient projection rules for episodic-memory continual learning.
//
// Every rule maps a current adapter gradient g onto (or toward) the cone
// {v : G v >= 0}, where each row of G is the averaged adapter gradient of one
// past task. Three rules are provided:
//
//   exact_qp_project  exact Euclidean projection by active-set enumeration
//   pgd_project       fixed-budget projected gradient descent on the dual
//                       min_{lambda >= 0} 1/2 |G^T lambda|^2 + (G g)^T lambda
//                     with recovery g~ = g + G^T lambda
//   agem_project      closed-form projection onto one averaged constraint

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "gemlora/linalg.hpp"

namespace gemlora {

// Stacked past-task gradients, one row per constraint.
//
// Rows with zero Euclidean norm carry no constraint and are dropped on
// construction; `dropped_rows()` lists their input indices. Construction throws
// NumericError on any non-finite entry, so projectors only need to check g.
class ConstraintMatrix {
 public:
  // m = 0 matrix; every projector is the identity on it.
  explicit ConstraintMatrix(std::size_t dim);
  ConstraintMatrix(Matrix rows, bool normalize);

  static ConstraintMatrix from_rows(std::span<const Vector> rows, std::size_t dim, bool normalize);

  std::size_t rows() const noexcept { return static_cast<std::size_t>(data_.rows()); }
  std::size_t dim() const noexcept { return dim_; }
  bool empty() const noexcept { return data_.rows() == 0; }
  bool normalized() const noexcept { return normalized_; }
  const Matrix& data() const noexcept { return data_; }

  // Raw norm of each kept row. When normalized, the raw inner product with
  // past task k is row_norms()[k] * (G v)_k.
  const Vector& row_norms() const noexcept { return row_norms_; }
  const std::vector<std::size_t>& dropped_rows() const noexcept { return dropped_; }
  // Input index of each kept row.
  const std::vector<std::size_t>& source_rows() const noexcept { return source_; }

  // Number of doubles held for G (m * d).
  std::size_t stored_floats() const noexcept { return static_cast<std::size_t>(data_.size()); }

 private:
  Matrix data_;
  std::size_t dim_ = 0;
  bool normalized_ = false;
  Vector row_norms_;
  std::vector<std::size_t> dropped_;
  std::vector<std::size_t> source_;
};

enum class DualOrigin { cold, warm };

struct DualState {
  Vector lambda;
  DualOrigin origin = DualOrigin::cold;
  std::size_t task_index = 0;

  static DualState cold(std::size_t m, std::size_t task_index) {
    return DualState{Vector::Zero(static_cast<Eigen::Index>(m)), DualOrigin::cold, task_index};
  }
};

struct ProjectionResult {
  Vector projected_gradient;
  DualState final_lambda;
  double dual_value = 0.0;
  std::size_t iterations_used = 0;
  // max_k -(G g~)_k clipped at zero.
  double max_violation = 0.0;
  // Seconds, steady clock, around the whole call.
  double wall_time = 0.0;
};

// Lower bound on the multipliers (the "memory_strength" margin). Off by default.
struct MarginConfig {
  double memory_strength = 0.3;
  bool enabled = false;
};

struct ExactQpOptions {
  std::size_t enumeration_limit = 16;
  // Solve each active-set system by a rank-revealing QR of G_S^T instead of
  // the Gram matrix. Same constraints, better conditioning, more flops.
  bool thin_qr = false;
};

struct ViolationReport {
  bool violated = false;
  // min_k (G g)_k, +inf when m = 0.
  double worst = 0.0;
};

// F(lambda) = 1/2 |G^T lambda|^2 + (G g)^T lambda, without forming G G^T.
double dual_objective(const Vector& lambda, const ConstraintMatrix& G, const Vector& g);

// grad F(lambda) = G (G^T lambda) + G g.
Vector dual_gradient(const Vector& lambda, const ConstraintMatrix& G, const Vector& g);

// Exactly `iterations` steps of lambda <- max(floor, lambda - eta * grad F(lambda))
// from `warm.lambda`, then g~ = g + G^T lambda. floor is 0, or memory_strength
// when the margin is enabled. The returned DualState is marked warm and keeps
// warm.task_index.
ProjectionResult pgd_project(const Vector& g, const ConstraintMatrix& G, const DualState& warm,
                             double eta, std::size_t iterations, const MarginConfig& margin = {});

// Exact projection onto {v : G v >= 0} by enumerating all 2^m active sets.
// Throws CapacityError when m exceeds options.enumeration_limit.
ProjectionResult exact_qp_project(const Vector& g, const ConstraintMatrix& G,
                                  const ExactQpOptions& options = {});

// A-GEM: g if g^T g_ref >= 0, else g - (g^T g_ref / |g_ref|^2) g_ref.
Vector agem_project(const Vector& g, const Vector& g_ref);

ViolationReport violation_check(const Vector& g, const ConstraintMatrix& G, double tol);

}  // namespace gemlora
