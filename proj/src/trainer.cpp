// Copyright 2026 The gemlora Authors
// SPDX-License-Identifier: Apache-2.0

#include "gemlora/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

namespace gemlora {

namespace {

using Clock = std::chrono::steady_clock;

double now_seconds() { return std::chrono::duration<double>(Clock::now().time_since_epoch()).count(); }

std::vector<std::size_t> past_tasks(const ReplayBuffer& buffers, std::size_t current) {
  std::vector<std::size_t> out;
  for (const std::size_t t : buffers.tasks()) {
    if (t < current && buffers.size(t) > 0) out.push_back(t);
  }
  return out;
}

double clipped_violation(const Vector& constraint_values) {
  if (constraint_values.size() == 0) return 0.0;
  return std::max(0.0, -constraint_values.minCoeff());
}

std::optional<double> min_raw_constraint(const ConstraintMatrix& G, const Vector& g_tilde) {
  if (G.empty()) return std::nullopt;
  const Vector values = (G.data() * g_tilde).cwiseProduct(G.normalized() ? G.row_norms() : Vector::Ones(G.rows()));
  return values.minCoeff();
}

// A-GEM reference sample: eval_mb_size examples drawn without replacement from
// the union of the past buffers (all of them when the union is smaller).
Dataset sample_reference(const ReplayBuffer& buffers, std::span<const std::size_t> tasks, std::size_t n, Rng& rng) {
  std::vector<const Example*> pool;
  for (const std::size_t t : tasks) {
    for (const auto& ex : buffers.examples(t)) pool.push_back(&ex);
  }
  const std::size_t take = std::min(n, pool.size());
  for (std::size_t i = 0; i < take; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.index(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  Dataset out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) out.push_back(*pool[i]);
  return out;
}

std::vector<double> evaluate_all(const TinyMlp& model, const Stream& stream) {
  std::vector<double> acc;
  acc.reserve(stream.size());
  for (const auto& split : stream) acc.push_back(accuracy(model, split.test));
  return acc;
}

}  // namespace

std::string to_string(Method m) {
  switch (m) {
    case Method::naive:
      return "naive";
    case Method::gem_exact:
      return "gem_exact";
    case Method::agem:
      return "agem";
    case Method::igem:
      return "igem";
  }
  return "naive";
}

Method method_from_string(const std::string& name) {
  if (name == "naive") return Method::naive;
  if (name == "gem_exact" || name == "gem") return Method::gem_exact;
  if (name == "agem") return Method::agem;
  if (name == "igem") return Method::igem;
  throw ConfigError("method", "unknown method '" + name + "' (expected naive, gem_exact, agem, igem)");
}

std::string to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adamw"; }

OptimizerKind optimizer_from_string(const std::string& name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adamw") return OptimizerKind::adamw;
  throw ConfigError("optimizer", "unknown optimizer '" + name + "' (expected sgd or adamw)");
}

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr", "must be positive");
  if (method == Method::igem && pgd_iteration == 0) throw ConfigError("pgd_iteration", "must be at least 1 for igem");
  if (!(stepsize_factor > 0.0) || stepsize_factor > 1.0) throw ConfigError("stepsize_factor", "must lie in (0, 1]");
  if (train_mb_size == 0) throw ConfigError("train_mb_size", "must be positive");
  if (eval_mb_size == 0) throw ConfigError("eval_mb_size", "must be positive");
  if (train_epochs == 0) throw ConfigError("train_epochs", "must be positive");
  if (n_experiences == 0) throw ConfigError("n_experiences", "must be positive");
  if (patterns_per_exp == 0) throw ConfigError("patterns_per_exp", "must be positive");
  if (memory_size == 0) throw ConfigError("memory_size", "must be positive");
  if (proj_interval == 0) throw ConfigError("proj_interval", "must be positive");
  if (!(margin.memory_strength >= 0.0)) throw ConfigError("memory_strength", "must be nonnegative");
  if (power_iters == 0) throw ConfigError("power_iters", "must be positive");
  if (spectral_refresh == 0) throw ConfigError("spectral_refresh", "must be positive");
  if (!(violation_tol >= 0.0)) throw ConfigError("violation_tol", "must be nonnegative");
  if (enumeration_limit == 0 || enumeration_limit > 24) throw ConfigError("enumeration_limit", "must lie in [1, 24]");
  if (optimizer == OptimizerKind::adamw) {
    if (!(adamw.beta1 >= 0.0 && adamw.beta1 < 1.0)) throw ConfigError("adamw.beta1", "must lie in [0, 1)");
    if (!(adamw.beta2 >= 0.0 && adamw.beta2 < 1.0)) throw ConfigError("adamw.beta2", "must lie in [0, 1)");
    if (!(adamw.eps > 0.0)) throw ConfigError("adamw.eps", "must be positive");
    if (!(adamw.weight_decay >= 0.0)) throw ConfigError("adamw.weight_decay", "must be nonnegative");
  }
  if (model.rank == 0) throw ConfigError("model.rank", "must be at least 1");
  if (!(model.alpha > 0.0)) throw ConfigError("model.alpha", "must be positive");
  if (pretrain.batch_size == 0) throw ConfigError("pretrain.batch_size", "must be positive");
  if (!(pretrain.lr > 0.0)) throw ConfigError("pretrain.lr", "must be positive");
}

bool TrainConfig::operator==(const TrainConfig& o) const {
  return method == o.method && lr == o.lr && pgd_iteration == o.pgd_iteration && stepsize_factor == o.stepsize_factor &&
         train_mb_size == o.train_mb_size && eval_mb_size == o.eval_mb_size && train_epochs == o.train_epochs &&
         n_experiences == o.n_experiences && seed == o.seed && optimizer == o.optimizer && adamw == o.adamw &&
         patterns_per_exp == o.patterns_per_exp && memory_size == o.memory_size && proj_interval == o.proj_interval &&
         margin.memory_strength == o.margin.memory_strength && margin.enabled == o.margin.enabled &&
         normalize_rows == o.normalize_rows && power_iters == o.power_iters && spectral_refresh == o.spectral_refresh &&
         skip_feasible == o.skip_feasible && violation_tol == o.violation_tol && thin_qr == o.thin_qr &&
         enumeration_limit == o.enumeration_limit && eval_every == o.eval_every && model == o.model &&
         pretrain.steps == o.pretrain.steps && pretrain.lr == o.pretrain.lr &&
         pretrain.batch_size == o.pretrain.batch_size && pretrain.seed == o.pretrain.seed &&
         pretrain_pool == o.pretrain_pool;
}

OptimizerState make_optimizer(const TrainConfig& config, std::size_t dim) {
  OptimizerState s;
  s.kind = config.optimizer;
  s.lr = config.lr;
  s.adamw = config.adamw;
  if (s.kind == OptimizerKind::adamw) {
    s.first_moment = Vector::Zero(static_cast<Eigen::Index>(dim));
    s.second_moment = Vector::Zero(static_cast<Eigen::Index>(dim));
  }
  return s;
}

Vector optimizer_step(const Vector& phi, const Vector& g_tilde, OptimizerState& state) {
  if (phi.size() != g_tilde.size()) throw DimensionError("optimizer_step: parameter and gradient lengths differ");
  Vector next;
  if (state.kind == OptimizerKind::sgd) {
    next = phi - state.lr * g_tilde;
  } else {
    if (state.first_moment.size() != phi.size()) {
      state.first_moment = Vector::Zero(phi.size());
      state.second_moment = Vector::Zero(phi.size());
    }
    const auto& c = state.adamw;
    const double t = static_cast<double>(state.steps + 1);
    state.first_moment = c.beta1 * state.first_moment + (1.0 - c.beta1) * g_tilde;
    state.second_moment = c.beta2 * state.second_moment + (1.0 - c.beta2) * g_tilde.cwiseProduct(g_tilde);
    const double bias1 = 1.0 - std::pow(c.beta1, t);
    const double bias2 = 1.0 - std::pow(c.beta2, t);
    const Vector m_hat = state.first_moment / bias1;
    const Vector v_hat = state.second_moment / bias2;
    const Vector adaptive = m_hat.array() / (v_hat.array().sqrt() + c.eps);
    next = phi - state.lr * (adaptive + c.weight_decay * phi);
  }
  if (!next.allFinite()) throw NumericError("optimizer_step: update produced non-finite parameters");
  ++state.steps;
  return next;
}

std::vector<double> RunLog::projection_times() const {
  std::vector<double> out;
  for (const auto& s : steps) {
    if (s.projected) out.push_back(s.projection_time);
  }
  return out;
}

TrainState::TrainState(const TrainConfig& config, std::size_t adapter_dim)
    : dual(DualState::cold(0, 0)),
      spectral(config.power_iters, config.spectral_refresh, mix_seed(config.seed, 0x73706563ULL)),
      optimizer(make_optimizer(config, adapter_dim)),
      rng(mix_seed(config.seed, 0x747261696eULL)),
      clock_origin(now_seconds()) {}

StepRecord train_step(TinyMlp& model, std::span<const Example> batch, ReplayBuffer& buffers, TrainState& state,
                      const TrainConfig& config) {
  StepRecord rec;
  rec.task = state.current_task;
  rec.step = state.global_step;
  rec.task_step = state.task_step;

  const auto lg = loss_and_gradient(model, batch);
  rec.loss = lg.loss;
  if (!std::isfinite(lg.loss) || !lg.gradient.allFinite()) {
    rec.timestamp = now_seconds() - state.clock_origin;
    throw TrainingAborted("non-finite loss at task " + std::to_string(rec.task) + " step " + std::to_string(rec.step),
                          rec);
  }
  const Vector& g = lg.gradient;
  Vector g_tilde = g;

  const bool task_changed = !state.previous_task || *state.previous_task != state.current_task;
  const std::vector<std::size_t> tasks = past_tasks(buffers, state.current_task);

  const bool uses_matrix = config.method == Method::gem_exact || config.method == Method::igem;
  if (uses_matrix) {
    if (task_changed || !state.constraints || state.task_step % config.proj_interval == 0) {
      state.constraints = build_constraint_matrix(buffers, model, tasks, config.normalize_rows);
      state.constraints_built_at = state.global_step;
    }
    const ConstraintMatrix& G = *state.constraints;
    rec.constraints = G.rows();

    if (task_changed || static_cast<std::size_t>(state.dual.lambda.size()) != G.rows()) {
      state.dual = DualState::cold(G.rows(), state.current_task);
    }
    rec.start_origin = state.dual.origin;

    const Vector Gg = G.empty() ? Vector(0) : Vector(G.data() * g);
    rec.unprojected_violation = clipped_violation(Gg);

    bool skip = false;
    double check_time = 0.0;
    if (config.skip_feasible) {
      const auto t0 = Clock::now();
      skip = !violation_check(g, G, config.violation_tol).violated;
      check_time = std::chrono::duration<double>(Clock::now() - t0).count();
    }

    if (skip) {
      rec.projected = true;
      rec.projection_time = check_time;
      rec.max_violation = rec.unprojected_violation;
    } else if (config.method == Method::gem_exact) {
      ExactQpOptions opts;
      opts.enumeration_limit = config.enumeration_limit;
      opts.thin_qr = config.thin_qr;
      const ProjectionResult r = exact_qp_project(g, G, opts);
      g_tilde = r.projected_gradient;
      rec.projected = true;
      rec.projection_time = r.wall_time + check_time;
      rec.lambda_norm = r.final_lambda.lambda.norm();
      rec.max_violation = r.max_violation;
    } else {
      const auto t0 = Clock::now();
      const SpectralEstimate& est = state.spectral.update(G);
      const double spectral_time = state.spectral.refreshed() ? std::chrono::duration<double>(Clock::now() - t0).count() : 0.0;
      if (G.empty() || !(est.sigma_max_hat > 0.0)) {
        const ProjectionResult r = pgd_project(g, ConstraintMatrix(G.dim()), DualState::cold(0, state.current_task), 1.0,
                                               std::max<std::size_t>(1, config.pgd_iteration), config.margin);
        g_tilde = r.projected_gradient;
        rec.projection_time = r.wall_time + spectral_time + check_time;
        rec.max_violation = rec.unprojected_violation;
      } else {
        const double eta = stepsize(est, config.stepsize_factor);
        ProjectionResult r = pgd_project(g, G, state.dual, eta, config.pgd_iteration, config.margin);
        g_tilde = r.projected_gradient;
        rec.projection_time = r.wall_time + spectral_time + check_time;
        rec.lambda_norm = r.final_lambda.lambda.norm();
        rec.max_violation = r.max_violation;
        state.dual = std::move(r.final_lambda);
        state.dual.task_index = state.current_task;
      }
      rec.projected = true;
    }
    rec.min_raw_constraint = min_raw_constraint(G, g_tilde);
  } else if (config.method == Method::agem) {
    if (!tasks.empty()) {
      const Dataset reference = sample_reference(buffers, tasks, config.eval_mb_size, state.rng);
      const Vector g_ref = backward(model, reference);
      const double ref_norm = g_ref.norm();
      const auto t0 = Clock::now();
      g_tilde = agem_project(g, g_ref);
      rec.projection_time = std::chrono::duration<double>(Clock::now() - t0).count();
      rec.projected = true;
      rec.constraints = 1;
      if (ref_norm > 0.0) {
        rec.unprojected_violation = std::max(0.0, -g.dot(g_ref) / ref_norm);
        rec.max_violation = std::max(0.0, -g_tilde.dot(g_ref) / ref_norm);
        rec.min_raw_constraint = g_tilde.dot(g_ref);
      }
    }
  }

  model.set_adapter_params(optimizer_step(model.adapter_params(), g_tilde, state.optimizer));
  buffers.insert(state.current_task, batch);

  state.previous_task = state.current_task;
  ++state.global_step;
  ++state.task_step;
  rec.timestamp = now_seconds() - state.clock_origin;
  return rec;
}

TinyMlp make_base_model(const TrainConfig& config, std::span<const Example> pretrain_pool) {
  TinyMlp model(config.model, mix_seed(config.seed, 0x62617365ULL));
  PretrainConfig pc = config.pretrain;
  pc.seed = mix_seed(config.seed, pc.seed);
  pretrain_base(model, pretrain_pool, pc);
  return model;
}

RunOutput run_experiences(const TrainConfig& config, const Stream& stream, std::span<const Example> pretrain_pool) {
  config.validate();
  if (stream.size() != config.n_experiences) {
    throw ConfigError("n_experiences", "config expects " + std::to_string(config.n_experiences) +
                                           " experiences, stream provides " + std::to_string(stream.size()));
  }
  for (const auto& split : stream) {
    if (split.train.empty() || split.test.empty()) {
      throw ConfigError("stream", "experience " + std::to_string(split.experience_id) + " has an empty train or test set");
    }
    if (static_cast<std::size_t>(split.train.front().x.size()) != config.model.input) {
      throw ConfigError("model.input", "stream features have dimension " +
                                           std::to_string(split.train.front().x.size()) + ", model expects " +
                                           std::to_string(config.model.input));
    }
  }

  TinyMlp model = make_base_model(config, pretrain_pool);
  ReplayBuffer buffers({config.patterns_per_exp, config.memory_size, mix_seed(config.seed, 0x6d656dULL)});
  TrainState state(config, model.adapter_dim());

  const std::size_t T = stream.size();
  RunOutput out{AccuracyMatrix(T), {}};
  out.accuracy.set_row(0, evaluate_all(model, stream));

  Dataset batch;
  for (std::size_t task = 0; task < T; ++task) {
    state.current_task = task;
    state.task_step = 0;
    const Dataset& train = stream[task].train;
    std::vector<std::size_t> order(train.size());
    for (std::size_t epoch = 0; epoch < config.train_epochs; ++epoch) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      state.rng.shuffle(std::span<std::size_t>(order));
      for (std::size_t begin = 0; begin < order.size(); begin += config.train_mb_size) {
        const std::size_t end = std::min(order.size(), begin + config.train_mb_size);
        batch.clear();
        for (std::size_t i = begin; i < end; ++i) batch.push_back(train[order[i]]);
        try {
          out.log.steps.push_back(train_step(model, batch, buffers, state, config));
        } catch (const TrainingAborted& e) {
          out.log.steps.push_back(e.record);
          out.log.diagnostics.emplace_back(e.what());
          throw;
        }
        if (config.eval_every > 0 && state.global_step % config.eval_every == 0) {
          out.log.curve.push_back({state.global_step, task, evaluate_all(model, stream)});
        }
      }
    }
    out.accuracy.set_row(task + 1, evaluate_all(model, stream));
  }
  return out;
}

}  // namespace gemlora
