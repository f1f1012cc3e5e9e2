// Copyright 2026 The gemlora Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>

#include "gemlora/linalg.hpp"
#include "gemlora/projector.hpp"

namespace gemlora {

// Rayleigh-quotient estimate of sigma_max(G G^T). Short runs underestimate.
struct SpectralEstimate {
  double sigma_max_hat = 0.0;
  std::size_t power_iters = 0;
  std::size_t stale_steps = 0;
};

// Deterministic pseudo-random unit vector of length m.
Vector seeded_unit_vector(std::size_t m, std::uint64_t seed);

// `iters` steps of v <- G(G^T v) / |G(G^T v)| from v0, then returns v^T G G^T v.
// m = 0 yields sigma_max_hat = 0. If `top_vector` is non-null it receives the
// final iterate.
SpectralEstimate power_iteration(const ConstraintMatrix& G, const Vector& v0, std::size_t iters,
                                 Vector* top_vector = nullptr);

// eta = c / sigma_max_hat; c must lie in (0, 1].
double stepsize(const SpectralEstimate& est, double c);

// Owns the refresh schedule for one training run: the estimate is recomputed
// every `refresh_every` calls, or immediately when the constraint count changes.
// Between refreshes at the same m, power iteration restarts from the last
// iterate rather than from a fresh seeded vector.
class SpectralTracker {
 public:
  SpectralTracker(std::size_t power_iters, std::size_t refresh_every, std::uint64_t seed);

  const SpectralEstimate& update(const ConstraintMatrix& G);
  const SpectralEstimate& estimate() const noexcept { return estimate_; }
  // True if the last update() ran power iteration.
  bool refreshed() const noexcept { return refreshed_; }
  std::size_t refresh_count() const noexcept { return refresh_count_; }

 private:
  std::size_t power_iters_;
  std::size_t refresh_every_;
  std::uint64_t seed_;
  SpectralEstimate estimate_;
  Vector top_;
  std::size_t last_m_ = 0;
  bool primed_ = false;
  bool refreshed_ = false;
  std::size_t refresh_count_ = 0;
};

}  // namespace gemlora
