// Copyright 2026 The gemlora Authors
// SPDX-License-Identifier: Apache-2.0

#include "gemlora/projector.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cstdint>
#include <limits>
#include <string>

#include "gemlora/errors.hpp"

namespace gemlora {

namespace {

using Clock = std::chrono::steady_clock;

constexpr double kMultiplierTol = 1e-10;
constexpr double kFeasibilityTol = 1e-9;
constexpr double kObjectiveTieTol = 1e-12;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void require_length(const Vector& g, const ConstraintMatrix& G, const char* who) {
  if (static_cast<std::size_t>(g.size()) != G.dim()) {
    throw DimensionError(std::string(who) + ": gradient has length " + std::to_string(g.size()) +
                         ", constraint matrix has dim " + std::to_string(G.dim()));
  }
}

void require_gradient(const Vector& g, const ConstraintMatrix& G, const char* who) {
  require_length(g, G, who);
  if (!g.allFinite()) throw NumericError(std::string(who) + ": gradient has non-finite entries");
}

void require_multipliers(const Vector& lambda, const ConstraintMatrix& G, const char* who) {
  if (static_cast<std::size_t>(lambda.size()) != G.rows()) {
    throw DimensionError(std::string(who) + ": multiplier vector has length " +
                         std::to_string(lambda.size()) + ", expected " + std::to_string(G.rows()));
  }
}

// Options for one fused pass of gram_apply.
struct GramPass {
  const Vector* g = nullptr;  // input for the two outputs below
  Vector* Gg = nullptr;       // receives A g
  Vector* g_tilde = nullptr;  // receives g + u
};

// r = A u with u = A^T lambda in one pass over A, a column block at a time;
// each block of u lives only in `scratch`. Returns |u|^2 when g_tilde is
// requested, else 0.
double gram_apply(const Matrix& A, const Vector& lambda, Vector& r, Vector& scratch, const GramPass& pass = {}) {
  constexpr Eigen::Index kBlock = 1024;
  const Eigen::Index d = A.cols();
  scratch.resize(std::min(kBlock, d));
  r.setZero();
  if (pass.Gg) pass.Gg->setZero(A.rows());
  double u_sq = 0.0;
  for (Eigen::Index c = 0; c < d; c += kBlock) {
    const Eigen::Index b = std::min(kBlock, d - c);
    auto Ac = A.middleCols(c, b);
    auto uc = scratch.head(b);
    uc.noalias() = Ac.transpose() * lambda;
    r.noalias() += Ac * uc;
    if (pass.Gg) pass.Gg->noalias() += Ac * pass.g->segment(c, b);
    if (pass.g_tilde) {
      pass.g_tilde->segment(c, b) = pass.g->segment(c, b) + uc;
      u_sq += uc.squaredNorm();
    }
  }
  return u_sq;
}

double max_violation_of(const Vector& constraint_values) {
  if (constraint_values.size() == 0) return 0.0;
  return std::max(0.0, -constraint_values.minCoeff());
}

ProjectionResult identity_result(const Vector& g, std::size_t m, std::size_t task_index,
                                 Clock::time_point start) {
  ProjectionResult out;
  out.projected_gradient = g;
  out.final_lambda = DualState::cold(m, task_index);
  out.final_lambda.origin = DualOrigin::warm;
  out.wall_time = seconds_since(start);
  return out;
}

// Masks of an m-bit set ordered by (popcount, value): smaller active sets first.
std::vector<std::uint32_t> masks_by_size(std::size_t m) {
  std::vector<std::uint32_t> masks(std::size_t{1} << m);
  for (std::uint32_t i = 0; i < masks.size(); ++i) masks[i] = i;
  std::stable_sort(masks.begin(), masks.end(), [](std::uint32_t a, std::uint32_t b) {
    return std::popcount(a) < std::popcount(b);
  });
  return masks;
}

}  // namespace

ConstraintMatrix::ConstraintMatrix(std::size_t dim) : data_(0, static_cast<Eigen::Index>(dim)), dim_(dim) {
  if (dim == 0) throw DimensionError("ConstraintMatrix: dim must be at least 1");
}

ConstraintMatrix::ConstraintMatrix(Matrix rows, bool normalize)
    : dim_(static_cast<std::size_t>(rows.cols())), normalized_(normalize) {
  if (dim_ == 0) throw DimensionError("ConstraintMatrix: dim must be at least 1");
  if (!rows.allFinite()) throw NumericError("ConstraintMatrix: non-finite entry in constraint rows");

  std::vector<Eigen::Index> keep;
  std::vector<double> norms;
  for (Eigen::Index k = 0; k < rows.rows(); ++k) {
    const double norm = rows.row(k).norm();
    if (norm == 0.0) {
      dropped_.push_back(static_cast<std::size_t>(k));
      continue;
    }
    keep.push_back(k);
    norms.push_back(norm);
  }

  if (dropped_.empty()) {
    data_ = std::move(rows);
  } else {
    data_.resize(static_cast<Eigen::Index>(keep.size()), rows.cols());
    for (std::size_t i = 0; i < keep.size(); ++i) data_.row(static_cast<Eigen::Index>(i)) = rows.row(keep[i]);
  }
  row_norms_ = Eigen::Map<const Vector>(norms.data(), static_cast<Eigen::Index>(norms.size()));
  source_.assign(keep.begin(), keep.end());
  if (normalize) {
    for (Eigen::Index k = 0; k < data_.rows(); ++k) data_.row(k) /= row_norms_[k];
  }
}

ConstraintMatrix ConstraintMatrix::from_rows(std::span<const Vector> rows, std::size_t dim, bool normalize) {
  if (rows.empty()) {
    ConstraintMatrix empty(dim);
    empty.normalized_ = normalize;
    return empty;
  }
  Matrix stacked(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (static_cast<std::size_t>(rows[k].size()) != dim) {
      throw DimensionError("ConstraintMatrix: row " + std::to_string(k) + " has length " +
                           std::to_string(rows[k].size()) + ", expected " + std::to_string(dim));
    }
    stacked.row(static_cast<Eigen::Index>(k)) = rows[k].transpose();
  }
  return ConstraintMatrix(std::move(stacked), normalize);
}

double dual_objective(const Vector& lambda, const ConstraintMatrix& G, const Vector& g) {
  require_multipliers(lambda, G, "dual_objective");
  if (static_cast<std::size_t>(g.size()) != G.dim()) throw DimensionError("dual_objective: gradient length mismatch");
  if (G.empty()) return 0.0;
  const Vector u = G.data().transpose() * lambda;
  const Vector Gg = G.data() * g;
  return 0.5 * u.squaredNorm() + Gg.dot(lambda);
}

Vector dual_gradient(const Vector& lambda, const ConstraintMatrix& G, const Vector& g) {
  require_multipliers(lambda, G, "dual_gradient");
  if (static_cast<std::size_t>(g.size()) != G.dim()) throw DimensionError("dual_gradient: gradient length mismatch");
  if (G.empty()) return Vector(0);
  const Vector u = G.data().transpose() * lambda;
  return G.data() * u + G.data() * g;
}

ProjectionResult pgd_project(const Vector& g, const ConstraintMatrix& G, const DualState& warm,
                             double eta, std::size_t iterations, const MarginConfig& margin) {
  const auto start = Clock::now();
  if (!(eta > 0.0) || !std::isfinite(eta)) throw ContractError("pgd_project: eta must be positive and finite");
  if (iterations == 0) throw ContractError("pgd_project: iteration budget must be at least 1");
  if (margin.enabled && !(margin.memory_strength >= 0.0)) {
    throw ContractError("pgd_project: memory_strength must be nonnegative");
  }
  require_length(g, G, "pgd_project");
  require_multipliers(warm.lambda, G, "pgd_project");
  if (G.rows() > 0 && warm.lambda.minCoeff() < 0.0) {
    throw ContractError("pgd_project: warm-start multipliers must be nonnegative");
  }

  const std::size_t m = G.rows();
  if (m == 0 && !g.allFinite()) throw NumericError("pgd_project: gradient has non-finite entries");
  if (m == 0 || g.isZero(0.0)) return identity_result(g, m, warm.task_index, start);

  const Matrix& A = G.data();
  const double floor = margin.enabled ? margin.memory_strength : 0.0;

  // K + 1 passes over A: G g rides along with the first iteration.
  Vector Gg;
  Vector lambda = warm.lambda;
  Vector r(A.rows());
  Vector scratch;
  for (std::size_t k = 0; k < iterations; ++k) {
    if (k == 0 && lambda.isZero(0.0)) {
      // Cold start: G G^T lambda vanishes, only G g is needed.
      Gg.noalias() = A * g;
      r = Gg;
    } else {
      GramPass pass;
      if (k == 0) pass = {&g, &Gg, nullptr};
      gram_apply(A, lambda, r, scratch, pass);
      r += Gg;
    }
    // A is finite, so a NaN or Inf anywhere in g shows up in G g.
    if (k == 0 && !Gg.allFinite()) throw NumericError("pgd_project: gradient has non-finite entries");
    lambda = (lambda - eta * r).cwiseMax(floor);
  }

  ProjectionResult out;
  if (lambda.isZero(0.0)) {
    // lambda = 0 keeps g bit-for-bit.
    out.projected_gradient = g;
    out.dual_value = 0.0;
    out.max_violation = max_violation_of(Gg);
  } else {
    out.projected_gradient.resize(g.size());
    const double u_sq = gram_apply(A, lambda, r, scratch, {&g, nullptr, &out.projected_gradient});
    out.dual_value = 0.5 * u_sq + Gg.dot(lambda);
    r += Gg;
    out.max_violation = max_violation_of(r);
  }
  out.final_lambda = DualState{std::move(lambda), DualOrigin::warm, warm.task_index};
  out.iterations_used = iterations;
  out.wall_time = seconds_since(start);
  return out;
}

ProjectionResult exact_qp_project(const Vector& g, const ConstraintMatrix& G, const ExactQpOptions& options) {
  const auto start = Clock::now();
  require_gradient(g, G, "exact_qp_project");
  const std::size_t m = G.rows();
  if (m > options.enumeration_limit) {
    throw CapacityError("exact_qp_project: " + std::to_string(m) + " constraints exceed the enumeration limit of " +
                        std::to_string(options.enumeration_limit) + "; use pgd_project for large constraint sets");
  }
  if (m == 0 || g.isZero(0.0)) {
    ProjectionResult out = identity_result(g, m, 0, start);
    out.final_lambda.origin = DualOrigin::cold;
    if (m > 0) out.max_violation = max_violation_of(G.data() * g);
    return out;
  }

  const Matrix& A = G.data();
  const Matrix gram = A * A.transpose();
  const Vector Gg = A * g;

  double best_objective = std::numeric_limits<double>::infinity();
  Vector best_lambda;
  std::size_t evaluated = 0;

  Vector candidate(A.cols());
  Vector values(A.rows());
  std::vector<Eigen::Index> active;
  active.reserve(m);

  for (const std::uint32_t mask : masks_by_size(m)) {
    ++evaluated;
    active.clear();
    for (std::size_t k = 0; k < m; ++k) {
      if (mask & (std::uint32_t{1} << k)) active.push_back(static_cast<Eigen::Index>(k));
    }
    const auto s = static_cast<Eigen::Index>(active.size());

    Vector lambda_s(s);
    if (s > 0) {
      if (options.thin_qr) {
        Matrix rows_t(A.cols(), s);
        for (Eigen::Index j = 0; j < s; ++j) rows_t.col(j) = A.row(active[static_cast<std::size_t>(j)]).transpose();
        lambda_s = rows_t.completeOrthogonalDecomposition().solve(-g);
      } else {
        Matrix sub(s, s);
        Vector rhs(s);
        for (Eigen::Index i = 0; i < s; ++i) {
          rhs[i] = -Gg[active[static_cast<std::size_t>(i)]];
          for (Eigen::Index j = 0; j < s; ++j) {
            sub(i, j) = gram(active[static_cast<std::size_t>(i)], active[static_cast<std::size_t>(j)]);
          }
        }
        lambda_s = sub.completeOrthogonalDecomposition().solve(rhs);
      }
      if (!lambda_s.allFinite() || lambda_s.minCoeff() < -kMultiplierTol) continue;
    }

    // Candidate and its feasibility are evaluated in the primal space.
    candidate = g;
    for (Eigen::Index j = 0; j < s; ++j) {
      candidate += lambda_s[j] * A.row(active[static_cast<std::size_t>(j)]).transpose();
    }
    values.noalias() = A * candidate;
    if (values.minCoeff() < -kFeasibilityTol) continue;

    const double objective = 0.5 * (candidate - g).squaredNorm();
    if (objective < best_objective - kObjectiveTieTol) {
      best_objective = objective;
      best_lambda = Vector::Zero(static_cast<Eigen::Index>(m));
      for (Eigen::Index j = 0; j < s; ++j) {
        best_lambda[active[static_cast<std::size_t>(j)]] = std::max(0.0, lambda_s[j]);
      }
    }
  }

  if (best_lambda.size() == 0) {
    throw NumericError("exact_qp_project: no active set passed the feasibility tolerance");
  }

  ProjectionResult out;
  if (best_lambda.isZero(0.0)) {
    out.projected_gradient = g;
    out.max_violation = max_violation_of(Gg);
    out.dual_value = 0.0;
  } else {
    const Vector u = A.transpose() * best_lambda;
    out.projected_gradient = g + u;
    out.max_violation = max_violation_of(A * out.projected_gradient);
    out.dual_value = 0.5 * u.squaredNorm() + Gg.dot(best_lambda);
  }
  out.final_lambda = DualState{std::move(best_lambda), DualOrigin::cold, 0};
  out.iterations_used = evaluated;
  out.wall_time = seconds_since(start);
  return out;
}

Vector agem_project(const Vector& g, const Vector& g_ref) {
  if (g.size() != g_ref.size()) {
    throw DimensionError("agem_project: gradient length " + std::to_string(g.size()) +
                         " does not match reference length " + std::to_string(g_ref.size()));
  }
  if (!g.allFinite() || !g_ref.allFinite()) throw NumericError("agem_project: non-finite input");
  const double ref_sq = g_ref.squaredNorm();
  if (ref_sq == 0.0) return g;
  const double dot = g.dot(g_ref);
  if (dot >= 0.0) return g;
  return g - (dot / ref_sq) * g_ref;
}

ViolationReport violation_check(const Vector& g, const ConstraintMatrix& G, double tol) {
  if (!(tol >= 0.0)) throw ContractError("violation_check: tolerance must be nonnegative");
  if (static_cast<std::size_t>(g.size()) != G.dim()) throw DimensionError("violation_check: gradient length mismatch");
  if (G.empty()) return {false, std::numeric_limits<double>::infinity()};
  const double worst = (G.data() * g).minCoeff();
  return {worst < -tol, worst};
}

}  // namespace gemlora
