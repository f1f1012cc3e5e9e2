// Copyright 2026 The gemlora Authors
// SPDX-License-Identifier: Apache-2.0

#include "gemlora/spectral.hpp"

#include <string>

#include "gemlora/errors.hpp"
#include "gemlora/rng.hpp"

namespace gemlora {

Vector seeded_unit_vector(std::size_t m, std::uint64_t seed) {
  Vector v(static_cast<Eigen::Index>(m));
  if (m == 0) return v;
  Rng rng(mix_seed(seed, 0x5eed5eedULL, m));
  for (auto& x : v) x = rng.normal();
  const double norm = v.norm();
  if (norm == 0.0) {
    v.setZero();
    v[0] = 1.0;
    return v;
  }
  return v / norm;
}

SpectralEstimate power_iteration(const ConstraintMatrix& G, const Vector& v0, std::size_t iters,
                                 Vector* top_vector) {
  if (iters == 0) throw ContractError("power_iteration: iters must be at least 1");
  SpectralEstimate est;
  est.power_iters = iters;
  const std::size_t m = G.rows();
  if (m == 0) return est;
  if (static_cast<std::size_t>(v0.size()) != m) {
    throw DimensionError("power_iteration: start vector has length " + std::to_string(v0.size()) +
                         ", expected " + std::to_string(m));
  }
  const double v0_norm = v0.norm();
  if (!(v0_norm > 0.0) || !std::isfinite(v0_norm)) throw ContractError("power_iteration: start vector must be nonzero");

  const Matrix& A = G.data();
  Vector v = v0 / v0_norm;
  Vector u(A.cols());
  Vector w(A.rows());
  for (std::size_t i = 0; i < iters; ++i) {
    u.noalias() = A.transpose() * v;
    w.noalias() = A * u;
    const double norm = w.norm();
    if (norm == 0.0) {
      // v lies in the null space of G G^T.
      if (top_vector) *top_vector = v;
      return est;
    }
    v = w / norm;
  }
  u.noalias() = A.transpose() * v;
  est.sigma_max_hat = u.squaredNorm();
  if (top_vector) *top_vector = v;
  return est;
}

double stepsize(const SpectralEstimate& est, double c) {
  if (!(c > 0.0) || c > 1.0) throw ConfigError("stepsize_factor", "must lie in (0, 1], got " + std::to_string(c));
  if (!(est.sigma_max_hat > 0.0)) throw ContractError("stepsize: spectral estimate is zero; skip the projection");
  return c / est.sigma_max_hat;
}

SpectralTracker::SpectralTracker(std::size_t power_iters, std::size_t refresh_every, std::uint64_t seed)
    : power_iters_(power_iters), refresh_every_(refresh_every), seed_(seed) {
  if (power_iters == 0) throw ConfigError("power_iters", "must be at least 1");
  if (refresh_every == 0) throw ConfigError("spectral_refresh", "must be at least 1");
}

const SpectralEstimate& SpectralTracker::update(const ConstraintMatrix& G) {
  const std::size_t m = G.rows();
  const bool shape_changed = !primed_ || m != last_m_;
  refreshed_ = false;
  if (shape_changed || estimate_.stale_steps + 1 >= refresh_every_) {
    const Vector start = shape_changed || top_.size() == 0 ? seeded_unit_vector(m, seed_) : top_;
    if (m == 0) {
      estimate_ = SpectralEstimate{0.0, power_iters_, 0};
      top_.resize(0);
    } else {
      estimate_ = power_iteration(G, start, power_iters_, &top_);
    }
    estimate_.stale_steps = 0;
    refreshed_ = true;
    ++refresh_count_;
    last_m_ = m;
    primed_ = true;
  } else {
    ++estimate_.stale_steps;
  }
  return estimate_;
}

}  // namespace gemlora
