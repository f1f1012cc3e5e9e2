// Copyright 2026 The gemlora Authors
// SPDX-License-Identifier: Apache-2.0
//
// Training loop. One step:
//   1. loss and adapter gradient g on the minibatch
//   2. rebuild G from the replay buffers of earlier tasks
//   3. project g with the configured rule (warm-started dual for igem)
//   4. optimizer step on phi with the projected gradient
//   5. insert the minibatch into the current task's buffer; keep lambda
// The dual multipliers are reset to zero at every task boundary.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gemlora/adapter_model.hpp"
#include "gemlora/datagen.hpp"
#include "gemlora/errors.hpp"
#include "gemlora/metrics.hpp"
#include "gemlora/projector.hpp"
#include "gemlora/replay.hpp"
#include "gemlora/rng.hpp"
#include "gemlora/spectral.hpp"

namespace gemlora {

enum class Method { naive, gem_exact, agem, igem };
enum class OptimizerKind { sgd, adamw };

std::string to_string(Method m);
Method method_from_string(const std::string& name);
std::string to_string(OptimizerKind k);
OptimizerKind optimizer_from_string(const std::string& name);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  bool operator==(const AdamWConfig&) const = default;
};

struct TrainConfig {
  Method method = Method::igem;
  double lr = 0.001;
  std::size_t pgd_iteration = 3;  // K
  double stepsize_factor = 0.7;   // c in eta = c / sigma_max_hat
  std::size_t train_mb_size = 32;
  std::size_t eval_mb_size = 50;
  std::size_t train_epochs = 1;
  std::size_t n_experiences = 3;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::sgd;
  AdamWConfig adamw;

  std::size_t patterns_per_exp = 100;
  std::size_t memory_size = 150;
  std::size_t proj_interval = 1;
  MarginConfig margin;
  bool normalize_rows = true;
  std::size_t power_iters = 3;
  std::size_t spectral_refresh = 10;
  bool skip_feasible = false;
  double violation_tol = 0.0;
  bool thin_qr = false;
  std::size_t enumeration_limit = 16;
  // Record a per-task accuracy curve every this many steps (0: off).
  std::size_t eval_every = 0;

  ModelShape model;
  PretrainConfig pretrain;
  std::size_t pretrain_pool = 2000;

  // Throws ConfigError naming the first invalid field.
  void validate() const;
  bool operator==(const TrainConfig&) const;
};

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::sgd;
  double lr = 0.001;
  AdamWConfig adamw;
  Vector first_moment;
  Vector second_moment;
  std::size_t steps = 0;
};

OptimizerState make_optimizer(const TrainConfig& config, std::size_t dim);

// sgd:   phi - lr * g
// adamw: t += 1; m = b1 m + (1-b1) g; v = b2 v + (1-b2) g^2;
//        phi - lr * ( (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps) + wd * phi )
Vector optimizer_step(const Vector& phi, const Vector& g_tilde, OptimizerState& state);

struct StepRecord {
  std::size_t task = 0;
  std::size_t step = 0;       // global step
  std::size_t task_step = 0;  // step within the task
  double loss = 0.0;
  std::size_t constraints = 0;
  bool projected = false;
  double projection_time = 0.0;
  double lambda_norm = 0.0;
  // max_k -(G g~)_k and max_k -(G g)_k, clipped at zero, on the constraint
  // matrix actually used (row-normalized by default).
  double max_violation = 0.0;
  double unprojected_violation = 0.0;
  // min_k g_k^T g~ with the raw (unnormalized) past-task gradients.
  std::optional<double> min_raw_constraint;
  DualOrigin start_origin = DualOrigin::cold;
  double timestamp = 0.0;
};

struct CurvePoint {
  std::size_t step = 0;
  std::size_t task = 0;
  std::vector<double> accuracies;
};

struct RunLog {
  std::vector<StepRecord> steps;
  std::vector<CurvePoint> curve;
  std::vector<std::string> diagnostics;

  std::vector<double> projection_times() const;
};

// Mutable per-run state carried between steps.
struct TrainState {
  explicit TrainState(const TrainConfig& config, std::size_t adapter_dim);

  std::size_t current_task = 0;
  std::size_t global_step = 0;
  std::size_t task_step = 0;
  std::optional<std::size_t> previous_task;
  DualState dual;
  SpectralTracker spectral;
  OptimizerState optimizer;
  Rng rng;
  std::optional<ConstraintMatrix> constraints;
  std::size_t constraints_built_at = 0;
  double clock_origin = 0.0;
};

struct TrainingAborted : NumericError {
  TrainingAborted(const std::string& what, StepRecord record) : NumericError(what), record(std::move(record)) {}
  StepRecord record;
};

StepRecord train_step(TinyMlp& model, std::span<const Example> batch, ReplayBuffer& buffers, TrainState& state,
                      const TrainConfig& config);

struct RunOutput {
  AccuracyMatrix accuracy;
  RunLog log;
};

// Base model for a run: random init from the run seed, base weights trained on
// `pretrain_pool` (if nonempty), then frozen.
TinyMlp make_base_model(const TrainConfig& config, std::span<const Example> pretrain_pool);

// Trains the experiences in stream order and fills the accuracy matrix
// (row 0 before any training, row j after task j).
RunOutput run_experiences(const TrainConfig& config, const Stream& stream, std::span<const Example> pretrain_pool);

}  // namespace gemlora
