// Copyright 2026 The gemlora Authors
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance checks. `acceptance` runs all of them, `acceptance N` runs one.
// One [PASS]/[FAIL] line per criterion; exit status 1 if any selected check fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gemlora/bench.hpp"
#include "gemlora/config_io.hpp"
#include "gemlora/datagen.hpp"
#include "gemlora/metrics.hpp"
#include "gemlora/projector.hpp"
#include "gemlora/trainer.hpp"
#include "support/oracles.hpp"

namespace gemlora {
namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome()> check;
};

using clock_type = std::chrono::steady_clock;

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

const std::vector<std::uint64_t> kSeeds{0, 2, 5, 7, 11};

RunConfig desk_config() { return load_run_config(std::string(GEMLORA_SOURCE_DIR) + "/configs/desk.json"); }

RunOutput desk_run(Method method, std::uint64_t seed) {
  RunConfig cfg = desk_config();
  cfg.train.method = method;
  cfg.train.seed = seed;
  cfg.stream.seed = seed;
  const Stream stream = generate_stream(cfg.stream);
  const Dataset pool = generate_pretrain_pool(cfg.stream, cfg.train.pretrain_pool);
  return run_experiences(cfg.train, stream, pool);
}

Outcome oracle_equivalence() {
  const auto t0 = clock_type::now();
  std::mt19937_64 gen(20260101);
  int failures = 0;
  double worst = 0.0;
  double worst_oracle = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const auto inst = oracle::random_instance(gen, 1, 8, 2, 64);
    const ConstraintMatrix G(inst.G, true);
    const double eta = 1.0 / oracle::lipschitz(inst.G);
    const auto pgd = pgd_project(inst.g, G, DualState::cold(G.rows(), 0), eta, 500);
    const auto exact = exact_qp_project(inst.g, G);
    const auto bf = oracle::brute_force_qp(inst.G, inst.g);
    const double scale = std::max(exact.projected_gradient.norm(), 1e-8 * inst.g.norm());
    const double err = (pgd.projected_gradient - exact.projected_gradient).norm() / scale;
    worst = std::max(worst, err);
    worst_oracle = std::max(worst_oracle, (exact.projected_gradient - bf.g_tilde).norm() / scale);
    if (!(err <= 1e-6)) ++failures;
  }
  const double elapsed = seconds_since(t0);
  return {failures == 0 && elapsed < 30.0,
          fmt("%d/1000 instances above 1e-6 (worst %.3e); exact vs brute force worst %.1e; %.1f s", failures, worst,
              worst_oracle, elapsed)};
}

Outcome convergence_rate() {
  std::mt19937_64 gen(20260202);
  int violations = 0;
  double tightest = -1e300;  // max over checks of gap - bound
  for (int t = 0; t < 200; ++t) {
    const auto inst = oracle::random_instance(gen, 1, 8, 2, 64);
    const ConstraintMatrix G(inst.G, true);
    const double L = oracle::lipschitz(inst.G);
    const auto star = oracle::brute_force_qp(inst.G, inst.g);
    const double f_star = oracle::dual_value(inst.G, inst.g, star.lambda);
    for (std::size_t K : {1, 2, 4, 8, 16, 32}) {
      const auto r = pgd_project(inst.g, G, DualState::cold(G.rows(), 0), 1.0 / L, K);
      const double gap = oracle::dual_value(inst.G, inst.g, r.final_lambda.lambda) - f_star;
      const double bound = L * star.lambda.squaredNorm() / (2.0 * static_cast<double>(K));
      tightest = std::max(tightest, gap - bound);
      if (gap > bound + 1e-9) ++violations;
    }
  }
  return {violations == 0, fmt("%d violations over 1200 (instance, K) checks; max gap - bound %.3e", violations, tightest)};
}

Outcome monotone_descent() {
  std::mt19937_64 gen(20260303);
  int violations = 0;
  double worst_rise = 0.0;
  for (int t = 0; t < 300; ++t) {
    const auto inst = oracle::random_instance(gen, 1, 8, 2, 64);
    const ConstraintMatrix G(inst.G, true);
    const double eta = 1.0 / oracle::lipschitz(inst.G);
    DualState state = DualState::cold(G.rows(), 0);
    double prev = oracle::dual_value(inst.G, inst.g, state.lambda);
    for (int k = 0; k < 50; ++k) {
      state = pgd_project(inst.g, G, state, eta, 1).final_lambda;
      const double f = oracle::dual_value(inst.G, inst.g, state.lambda);
      worst_rise = std::max(worst_rise, f - prev);
      if (f > prev + 1e-12) ++violations;
      prev = f;
    }
  }
  return {violations == 0, fmt("%d increases over 300 instances x 50 iterations; largest rise %.3e", violations, worst_rise)};
}

Outcome kkt_certification() {
  std::mt19937_64 gen(20260404);
  int failures = 0;
  double worst_feas = 0.0, worst_slack = 0.0;
  for (int t = 0; t < 500; ++t) {
    auto inst = oracle::random_instance(gen, 1, 8, 2, 64);
    if (t % 5 == 0) {
      // Duplicated row: degenerate dual, unique primal.
      Matrix dup(inst.G.rows() + 1, inst.G.cols());
      dup << inst.G, inst.G.row(0);
      inst.G = dup;
    }
    const auto r = exact_qp_project(inst.g, ConstraintMatrix(inst.G, true));
    const auto k = oracle::kkt(inst.G, inst.g, r.final_lambda.lambda, r.projected_gradient);
    worst_feas = std::max(worst_feas, -k.min_constraint);
    worst_slack = std::max(worst_slack, k.max_slackness);
    if (k.min_constraint < -1e-9 || k.max_slackness > 1e-8 || k.min_lambda < -1e-10) ++failures;
  }
  return {failures == 0, fmt("%d/500 fail; worst infeasibility %.2e, worst |lambda_k (G g~)_k| %.2e", failures,
                             std::max(0.0, worst_feas), worst_slack)};
}

Outcome gradient_correctness() {
  double worst_fd = 0.0, worst_chain = 0.0;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const TinyMlp model = oracle::perturbed_model(ModelShape{}, seed);
    std::mt19937_64 gen(seed);
    for (std::size_t n : {1u, 8u}) {
      const auto batch = oracle::random_batch(gen, n, 32, 4);
      const Vector fd = oracle::fd_adapter_gradient(model, batch, 1e-5);
      worst_fd = std::max(worst_fd, oracle::max_relative_error(backward(model, batch), fd, 1e-6));
      const Vector chained = jacobian_transpose_apply(model, full_weight_gradient(model, batch));
      worst_chain = std::max(worst_chain, (backward(model, batch) - chained).cwiseAbs().maxCoeff());
    }
  }
  return {worst_fd <= 1e-4 && worst_chain <= 1e-10,
          fmt("finite-difference worst relative error %.2e; backward vs J^T full gradient %.2e", worst_fd, worst_chain)};
}

Outcome non_interference() {
  std::size_t steps = 0;
  double worst = 1e300;
  for (std::uint64_t seed : kSeeds) {
    const RunOutput out = desk_run(Method::gem_exact, seed);
    for (const auto& s : out.log.steps) {
      if (!s.projected || s.constraints == 0 || !s.min_raw_constraint) continue;
      ++steps;
      worst = std::min(worst, *s.min_raw_constraint);
    }
  }
  return {steps > 0 && worst >= -1e-9,
          fmt("%zu projected steps over 5 seeds; min_k g_k^T g~ = %.3e", steps, worst)};
}

std::optional<BenchReport> g_bench;

const BenchReport& bench_report() {
  if (!g_bench) g_bench = run_bench(BenchConfig{});
  return *g_bench;
}

Outcome cost_model() {
  const BenchReport& r = bench_report();
  return {r.grid.size() == 27 && r.fit.r2 >= 0.95,
          fmt("%zu cells, time = %.3e * K*m*d + %.3e, R^2 = %.4f; held-out m=2 cell off by %.0f%%", r.grid.size(),
              r.fit.slope, r.fit.intercept, r.fit.r2, 100.0 * r.check_relative_error)};
}

Outcome mpo_ordering() {
  const BenchReport& r = bench_report();
  return {r.ordering_holds, fmt("agem %.3e s, igem %.3e s, gem_exact %.3e s", r.ordering[0].seconds.mean,
                                r.ordering[1].seconds.mean, r.ordering[2].seconds.mean)};
}

Outcome accuracy_parity() {
  const auto t0 = clock_type::now();
  double acc_igem = 0, acc_exact = 0, f_igem = 0, f_naive = 0;
  for (std::uint64_t seed : kSeeds) {
    const RunOutput igem = desk_run(Method::igem, seed);
    const RunOutput exact = desk_run(Method::gem_exact, seed);
    const RunOutput naive = desk_run(Method::naive, seed);
    acc_igem += avg_acc(igem.accuracy);
    acc_exact += avg_acc(exact.accuracy);
    f_igem += *forgetting(igem.accuracy);
    f_naive += *forgetting(naive.accuracy);
  }
  const double n = static_cast<double>(kSeeds.size());
  acc_igem /= n;
  acc_exact /= n;
  f_igem /= n;
  f_naive /= n;
  const double elapsed = seconds_since(t0);
  return {std::abs(acc_igem - acc_exact) <= 0.02 && f_igem < f_naive && elapsed < 300.0,
          fmt("AvgAcc igem %.4f vs gem_exact %.4f (|diff| %.4f); Forgetting igem %.4f vs naive %.4f; %.1f s", acc_igem,
              acc_exact, std::abs(acc_igem - acc_exact), f_igem, f_naive, elapsed)};
}

Outcome metrics_fixtures() {
  AccuracyMatrix R(2);
  const double r0[] = {0.25, 0.25}, r1[] = {0.9, 0.5}, r2[] = {0.8, 0.85};
  R.set_row(0, r0);
  R.set_row(1, r1);
  R.set_row(2, r2);
  // Binary floating point: 0.8 - 0.9 is -0.09999999999999998.
  const double tol = 1e-12;
  const bool fixture = std::abs(avg_acc(R) - 0.825) <= tol && std::abs(*bwt(R) + 0.1) <= tol &&
                       std::abs(*fwt(R) - 0.25) <= tol && std::abs(*forgetting(R) - 0.1) <= tol;

  std::size_t qualifying = 0;
  double worst = 0.0;
  for (Method m : {Method::naive, Method::agem, Method::igem, Method::gem_exact}) {
    for (std::uint64_t seed : kSeeds) {
      const RunOutput out = desk_run(m, seed);
      if (!peaks_at_own_checkpoint(out.accuracy)) continue;
      ++qualifying;
      worst = std::max(worst, std::abs(*forgetting(out.accuracy) + *bwt(out.accuracy)));
    }
  }
  return {fixture && qualifying > 0 && worst <= tol,
          fmt("T=2 fixture %s; F = -BWT on %zu/20 runs that peak at their own checkpoint, worst |F + BWT| %.1e",
              fixture ? "reproduces" : "differs", qualifying, worst)};
}

Outcome determinism() {
  std::size_t runs = 0;
  bool same = true;
  for (Method m : {Method::naive, Method::agem, Method::igem, Method::gem_exact}) {
    for (std::uint64_t seed : {0u, 7u}) {
      const RunOutput a = desk_run(m, seed);
      const RunOutput b = desk_run(m, seed);
      same = same && a.accuracy == b.accuracy && to_json(a.accuracy).dump() == to_json(b.accuracy).dump();
      ++runs;
    }
  }
  return {same, fmt("%zu repeated runs, accuracy matrices %s", runs, same ? "bit-identical" : "differ")};
}

const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> all{
      {1, "oracle equivalence", oracle_equivalence},
      {2, "convergence rate", convergence_rate},
      {3, "monotone dual descent", monotone_descent},
      {4, "KKT certification", kkt_certification},
      {5, "gradient correctness", gradient_correctness},
      {6, "non-interference certificate", non_interference},
      {7, "cost model", cost_model},
      {8, "MPO ordering", mpo_ordering},
      {9, "accuracy parity", accuracy_parity},
      {10, "metrics fixtures", metrics_fixtures},
      {11, "determinism", determinism},
  };
  return all;
}

}  // namespace
}  // namespace gemlora

int main(int argc, char** argv) {
  using namespace gemlora;
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
  bool ok = true;
  for (const auto& c : criteria()) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), c.id) == selected.end()) continue;
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("[%s] %d %s: %s\n", o.passed ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
    std::fflush(stdout);
    ok = ok && o.passed;
  }
  return ok ? 0 : 1;
}
