// Copyright 2026 The gemlora Authors
// SPDX-License-Identifier: Apache-2.0
//
// Property suites behind `gemlora verify`. Every suite uses fixed seeds and
// reports one entry per property.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "gemlora/linalg.hpp"
#include "gemlora/projector.hpp"
#include "gemlora/rng.hpp"

namespace gemlora {

struct PropertyResult {
  std::string name;
  bool passed = false;
  nlohmann::json detail = nlohmann::json::object();
};

struct SuiteReport {
  std::string suite;
  std::vector<PropertyResult> properties;

  bool passed() const;
};

// Gaussian rows (row-normalized) and a Gaussian gradient, with
// m uniform in [m_lo, m_hi] and d uniform in [d_lo, d_hi].
struct QpInstance {
  ConstraintMatrix G;
  Vector g;
};

QpInstance random_qp(Rng& rng, std::size_t m_lo, std::size_t m_hi, std::size_t d_lo, std::size_t d_hi);

// Largest eigenvalue of G G^T by a dense symmetric eigensolve.
double gram_lipschitz(const ConstraintMatrix& G);

std::vector<std::string> suite_names();
SuiteReport run_suite(const std::string& name);  // ConfigError on unknown names

nlohmann::json to_json(const SuiteReport& report);

}  // namespace gemlora
