// Copyright 2026 The gemlora Authors
// SPDX-License-Identifier: Apache-2.0

#include "gemlora/verify.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>

#include "gemlora/adapter_model.hpp"
#include "gemlora/config_io.hpp"
#include "gemlora/errors.hpp"
#include "gemlora/metrics.hpp"
#include "gemlora/spectral.hpp"

namespace gemlora {

using nlohmann::json;

namespace {

constexpr std::uint64_t kSuiteSeed = 20260;

std::size_t uniform_count(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.index(hi - lo + 1); }

// |approx - exact| / |exact|, with the denominator floored at 1e-8 |g| so a
// zero optimum does not divide by zero.
double projection_error(const Vector& approx, const Vector& exact, const Vector& g) {
  const double scale = std::max(exact.norm(), 1e-8 * g.norm());
  return scale == 0.0 ? (approx - exact).norm() : (approx - exact).norm() / scale;
}

PropertyResult oracle_equivalence() {
  Rng rng(mix_seed(kSuiteSeed, 1));
  const std::size_t n = 1000;
  std::size_t failures = 0, failures_vs_g = 0;
  double worst = 0.0;
  json failed = json::array();
  for (std::size_t i = 0; i < n; ++i) {
    auto inst = random_qp(rng, 1, 8, 2, 64);
    const double L = gram_lipschitz(inst.G);
    const auto exact = exact_qp_project(inst.g, inst.G);
    const auto approx = pgd_project(inst.g, inst.G, DualState::cold(inst.G.rows(), 0), 1.0 / L, 500);
    const double err = projection_error(approx.projected_gradient, exact.projected_gradient, inst.g);
    worst = std::max(worst, err);
    if ((approx.projected_gradient - exact.projected_gradient).norm() > 1e-6 * inst.g.norm()) ++failures_vs_g;
    if (err > 1e-6) {
      ++failures;
      if (failed.size() < 10) failed.push_back({{"instance", i}, {"m", inst.G.rows()}, {"d", inst.G.dim()}, {"error", err}});
    }
  }
  return {"oracle_equivalence", failures == 0,
          {{"instances", n},
           {"failures", failures},
           {"failures_relative_to_g", failures_vs_g},
           {"worst_relative_error", worst},
           {"failed", failed}}};
}

PropertyResult kkt_certificate() {
  Rng rng(mix_seed(kSuiteSeed, 2));
  const std::size_t n = 500;
  double worst_feas = 0.0, worst_slack = 0.0, min_lambda = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto inst = random_qp(rng, 1, 8, 2, 64);
    const auto r = exact_qp_project(inst.g, inst.G);
    const Vector Gg = inst.G.data() * r.projected_gradient;
    worst_feas = std::max(worst_feas, -Gg.minCoeff());
    worst_slack = std::max(worst_slack, r.final_lambda.lambda.cwiseProduct(Gg).cwiseAbs().maxCoeff());
    min_lambda = std::min(min_lambda, r.final_lambda.lambda.minCoeff());
  }
  return {"kkt_certificate", worst_feas <= 1e-9 && worst_slack <= 1e-8 && min_lambda >= 0.0,
          {{"instances", n},
           {"worst_infeasibility", worst_feas},
           {"worst_complementary_slackness", worst_slack},
           {"min_lambda", min_lambda}}};
}

// F along a PGD run, one iteration at a time.
std::vector<double> dual_trace(const QpInstance& inst, double eta, std::size_t K) {
  std::vector<double> trace;
  DualState state = DualState::cold(inst.G.rows(), 0);
  trace.push_back(dual_objective(state.lambda, inst.G, inst.g));
  for (std::size_t k = 0; k < K; ++k) {
    const auto r = pgd_project(inst.g, inst.G, state, eta, 1);
    state = r.final_lambda;
    trace.push_back(r.dual_value);
  }
  return trace;
}

PropertyResult monotone_descent() {
  Rng rng(mix_seed(kSuiteSeed, 3));
  const std::size_t n = 300;
  std::size_t failures = 0;
  double worst_rise = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto inst = random_qp(rng, 1, 8, 2, 64);
    const auto trace = dual_trace(inst, 1.0 / gram_lipschitz(inst.G), 50);
    bool ok = true;
    for (std::size_t k = 1; k < trace.size(); ++k) {
      const double rise = trace[k] - trace[k - 1];
      worst_rise = std::max(worst_rise, rise);
      if (rise > 1e-12) ok = false;
    }
    if (!ok) ++failures;
  }
  return {"monotone_descent", failures == 0, {{"instances", n}, {"failures", failures}, {"worst_rise", worst_rise}}};
}

// eta from three power iterations and c = 0.9 instead of the exact L.
PropertyResult estimated_stepsize_descent() {
  Rng rng(mix_seed(kSuiteSeed, 4));
  const std::size_t n = 300;
  json failed = json::array();
  for (std::size_t i = 0; i < n; ++i) {
    auto inst = random_qp(rng, 1, 8, 2, 64);
    const auto est = power_iteration(inst.G, seeded_unit_vector(inst.G.rows(), i), 3);
    const auto trace = dual_trace(inst, stepsize(est, 0.9), 50);
    for (std::size_t k = 1; k < trace.size(); ++k) {
      if (trace[k] - trace[k - 1] > 1e-12) {
        failed.push_back({{"instance", i},
                          {"iteration", k},
                          {"sigma_hat", est.sigma_max_hat},
                          {"sigma_max", gram_lipschitz(inst.G)}});
        break;
      }
    }
  }
  return {"estimated_stepsize_descent", failed.empty(), {{"instances", n}, {"failed", failed}}};
}

PropertyResult identity_paths() {
  Rng rng(mix_seed(kSuiteSeed, 5));
  bool ok = true;
  for (int i = 0; i < 20; ++i) {
    Vector g(17);
    for (auto& v : g) v = rng.normal();
    const ConstraintMatrix empty(17);
    ok = ok && pgd_project(g, empty, DualState::cold(0, 0), 1.0, 3).projected_gradient == g;
    ok = ok && exact_qp_project(g, empty).projected_gradient == g;
    ok = ok && agem_project(g, Vector::Zero(17)) == g;
    // A feasible g (one row equal to g) stays untouched.
    Matrix row(1, 17);
    row.row(0) = g.transpose();
    const ConstraintMatrix G(row, true);
    ok = ok && pgd_project(g, G, DualState::cold(1, 0), 0.5, 5).projected_gradient == g;
  }
  return {"identity_paths", ok, {{"cases", 20}}};
}

PropertyResult convergence_bound() {
  Rng rng(mix_seed(kSuiteSeed, 6));
  const std::size_t n = 200;
  const std::size_t Ks[] = {1, 2, 4, 8, 16, 32};
  std::size_t failures = 0;
  double worst_margin = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    auto inst = random_qp(rng, 1, 8, 2, 64);
    const double L = gram_lipschitz(inst.G);
    const auto exact = exact_qp_project(inst.g, inst.G);
    const double F_star = dual_objective(exact.final_lambda.lambda, inst.G, inst.g);
    const double dist_sq = exact.final_lambda.lambda.squaredNorm();  // lambda0 = 0
    const auto trace = dual_trace(inst, 1.0 / L, 32);
    for (std::size_t K : Ks) {
      const double gap = trace[K] - F_star;
      const double bound = L * dist_sq / (2.0 * static_cast<double>(K)) + 1e-9;
      worst_margin = std::max(worst_margin, gap - bound);
      if (gap > bound) ++failures;
    }
  }
  return {"sublinear_gap_bound", failures == 0,
          {{"instances", n}, {"violations", failures}, {"worst_gap_minus_bound", worst_margin}}};
}

TinyMlp perturbed_default_model(std::uint64_t seed) {
  TinyMlp model(ModelShape{}, seed);
  Rng rng(mix_seed(seed, 99));
  Vector phi = model.adapter_params();
  for (auto& v : phi) v = 0.05 * rng.normal();
  model.set_adapter_params(phi);
  return model;
}

Dataset random_batch(Rng& rng, std::size_t n, std::size_t dim, std::size_t classes) {
  Dataset batch(n);
  for (auto& ex : batch) {
    ex.x.resize(static_cast<Eigen::Index>(dim));
    for (auto& v : ex.x) v = rng.normal();
    ex.label = static_cast<int>(rng.index(classes));
  }
  return batch;
}

PropertyResult finite_difference_gradient() {
  const TinyMlp base = perturbed_default_model(kSuiteSeed);
  Rng rng(mix_seed(kSuiteSeed, 7));
  const Dataset batch = random_batch(rng, 16, base.shape().input, base.shape().classes);
  const Vector analytic = backward(base, batch);
  const Vector phi = base.adapter_params();
  TinyMlp probe = base;
  const double h = 1e-5;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < phi.size(); ++i) {
    Vector p = phi;
    p[i] = phi[i] + h;
    probe.set_adapter_params(p);
    const double up = loss(probe, batch);
    p[i] = phi[i] - h;
    probe.set_adapter_params(p);
    const double down = loss(probe, batch);
    const double fd = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(fd), std::abs(analytic[i]), 1e-6});
    worst = std::max(worst, std::abs(fd - analytic[i]) / denom);
  }
  return {"finite_difference", worst <= 1e-4,
          {{"coordinates", phi.size()}, {"step", h}, {"worst_relative_error", worst}}};
}

PropertyResult chain_rule() {
  const TinyMlp model = perturbed_default_model(kSuiteSeed + 1);
  Rng rng(mix_seed(kSuiteSeed, 8));
  const Dataset batch = random_batch(rng, 16, model.shape().input, model.shape().classes);
  const Vector direct = backward(model, batch);
  const Vector lifted = jacobian_transpose_apply(model, full_weight_gradient(model, batch));
  const double diff = (direct - lifted).cwiseAbs().maxCoeff();
  return {"chain_rule", diff <= 1e-10, {{"max_abs_difference", diff}}};
}

AccuracyMatrix two_task_fixture() {
  AccuracyMatrix R(2);
  const double r0[] = {0.25, 0.25}, r1[] = {0.9, 0.5}, r2[] = {0.8, 0.85};
  R.set_row(0, r0);
  R.set_row(1, r1);
  R.set_row(2, r2);
  return R;
}

bool close(const std::optional<double>& v, double want) { return v && std::abs(*v - want) <= 1e-12; }

PropertyResult metric_fixtures() {
  const AccuracyMatrix R = two_task_fixture();
  const double a = avg_acc(R);
  const auto b = bwt(R), f = fwt(R), fg = forgetting(R);
  const bool ok = std::abs(a - 0.825) <= 1e-12 && close(b, -0.1) && close(f, 0.25) && close(fg, 0.1);
  return {"two_task_fixture", ok,
          {{"avg_acc", a},
           {"bwt", b ? json(*b) : json(nullptr)},
           {"fwt", f ? json(*f) : json(nullptr)},
           {"forgetting", fg ? json(*fg) : json(nullptr)}}};
}

PropertyResult single_task_absent() {
  AccuracyMatrix R(1);
  const double r0[] = {0.3}, r1[] = {0.6};
  R.set_row(0, r0);
  R.set_row(1, r1);
  const bool ok = avg_acc(R) == 0.6 && !bwt(R) && !fwt(R) && !forgetting(R);
  return {"single_task_absent", ok, {}};
}

PropertyResult forgetting_bwt_identity() {
  Rng rng(mix_seed(kSuiteSeed, 9));
  std::size_t checked = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t T = 2 + rng.index(5);
    AccuracyMatrix R(T);
    for (std::size_t j = 0; j <= T; ++j) {
      std::vector<double> row(T);
      for (auto& v : row) v = rng.uniform(0.2, 0.7);
      R.set_row(j, row);
    }
    // Make each task's best pre-final value sit on its own row.
    for (std::size_t i = 0; i < T; ++i) R.set(i + 1, i, rng.uniform(0.8, 1.0));
    if (!peaks_at_own_checkpoint(R)) continue;
    ++checked;
    worst = std::max(worst, std::abs(*forgetting(R) + *bwt(R)));
  }
  return {"forgetting_equals_negative_bwt", checked > 0 && worst <= 1e-12,
          {{"matrices", checked}, {"worst_difference", worst}}};
}

PropertyResult mpo_mean() {
  Rng rng(mix_seed(kSuiteSeed, 10));
  std::vector<double> t(1000);
  for (auto& v : t) v = rng.uniform(0.0, 1e-3);
  long double sum = 0;
  for (double v : t) sum += v;
  const double want = static_cast<double>(sum / 1000.0L);
  const auto got = mpo(t);
  const double pair[] = {1.0, 3.0};
  const bool ok = got && std::abs(*got - want) <= 1e-15 * want && mpo(pair) == 2.0 && !mpo(std::span<const double>{});
  return {"mpo_mean", ok, {{"mpo", got ? json(*got) : json(nullptr)}, {"reference", want}}};
}

}  // namespace

bool SuiteReport::passed() const {
  return std::all_of(properties.begin(), properties.end(), [](const PropertyResult& p) { return p.passed; });
}

QpInstance random_qp(Rng& rng, std::size_t m_lo, std::size_t m_hi, std::size_t d_lo, std::size_t d_hi) {
  const std::size_t m = uniform_count(rng, m_lo, m_hi);
  const std::size_t d = uniform_count(rng, d_lo, d_hi);
  Matrix rows(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < rows.size(); ++i) rows.data()[i] = rng.normal();
  Vector g(static_cast<Eigen::Index>(d));
  for (auto& v : g) v = rng.normal();
  return {ConstraintMatrix(rows, true), g};
}

double gram_lipschitz(const ConstraintMatrix& G) {
  if (G.empty()) return 0.0;
  const Eigen::MatrixXd gram = G.data() * G.data().transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram, Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

std::vector<std::string> suite_names() { return {"projector", "convergence", "gradients", "metrics"}; }

SuiteReport run_suite(const std::string& name) {
  SuiteReport r{name, {}};
  if (name == "projector") {
    r.properties = {oracle_equivalence(), kkt_certificate(), monotone_descent(), estimated_stepsize_descent(),
                    identity_paths()};
  } else if (name == "convergence") {
    r.properties = {convergence_bound()};
  } else if (name == "gradients") {
    r.properties = {finite_difference_gradient(), chain_rule()};
  } else if (name == "metrics") {
    r.properties = {metric_fixtures(), single_task_absent(), forgetting_bwt_identity(), mpo_mean()};
  } else {
    throw ConfigError("suite", "unknown suite '" + name + "' (expected projector, convergence, gradients, metrics)");
  }
  return r;
}

json to_json(const SuiteReport& report) {
  json props = json::array();
  for (const auto& p : report.properties) props.push_back({{"name", p.name}, {"passed", p.passed}, {"detail", p.detail}});
  return {{"schema", kVerifySchema}, {"suite", report.suite}, {"passed", report.passed()}, {"properties", props}};
}

}  // namespace gemlora
