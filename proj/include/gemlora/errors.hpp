// Copyright 2026 The gemlora Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace gemlora {

// Shape or length disagreement between operands.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// NaN/Inf in an input or an intermediate that must stay finite.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Caller broke a documented precondition (negative multiplier, empty batch, ...).
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

// Problem too large for an exhaustive routine.
struct CapacityError : std::length_error {
  using std::length_error::length_error;
};

// Invalid configuration value. `field()` names the offending key.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& what)
      : std::invalid_argument(field.empty() ? what : field + ": " + what),
        field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

// Malformed or out-of-range input data (CSV rows, labels, checkpoints).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace gemlora
