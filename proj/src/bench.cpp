// Copyright 2026 The gemlora Authors
// SPDX-License-Identifier: Apache-2.0

#include "gemlora/bench.hpp"

#include <charconv>
#include <chrono>
#include <cmath>

#include "gemlora/config_io.hpp"
#include "gemlora/errors.hpp"
#include "gemlora/projector.hpp"
#include "gemlora/rng.hpp"
#include "gemlora/spectral.hpp"

namespace gemlora {

namespace {

using clock_type = std::chrono::steady_clock;

// Keeps the compiler from discarding a projection.
volatile double g_sink = 0.0;

Vector random_vector(Rng& rng, std::size_t n) {
  Vector v(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.normal();
  return v;
}

std::string fmt(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

nlohmann::json cell_json(const BenchCell& c) {
  return {{"method", c.method},     {"m", c.m},
          {"dim", c.dim},           {"K", c.iterations},
          {"mean_s", c.seconds.mean}, {"std_s", c.seconds.std},
          {"n", c.seconds.n}};
}

}  // namespace

LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ContractError("linear_fit: need two or more paired points");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) throw ContractError("linear_fit: x values are all equal");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double ss_res = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - (f.slope * x[i] + f.intercept);
    ss_res += r * r;
  }
  f.r2 = syy == 0.0 ? 1.0 : 1.0 - ss_res / syy;
  return f;
}

namespace {

// One (method, m, d, K) instance, ready to be called repeatedly.
struct TimedCase {
  std::string method;
  std::size_t m = 0;
  std::size_t dim = 0;
  std::size_t iterations = 0;
  ConstraintMatrix G{1};
  Vector g;
  double eta = 1.0;
  std::size_t repeats = 0;
  std::vector<double> times;

  double call() const {
    if (method == "agem") {
      const Vector ref = G.empty() ? Vector::Zero(static_cast<Eigen::Index>(dim)).eval()
                                   : Vector(G.data().colwise().mean().transpose());
      return agem_project(g, ref)[0];
    }
    if (method == "igem") {
      return pgd_project(g, G, DualState::cold(G.rows(), 0), eta, iterations).projected_gradient[0];
    }
    if (method == "gem_exact") return exact_qp_project(g, G).projected_gradient[0];
    throw ConfigError("method", "unknown bench method '" + method + "'");
  }

  BenchCell cell() const { return {method, m, dim, method == "igem" ? iterations : 0, mean_std(times)}; }
};

TimedCase make_case(const std::string& method, std::size_t m, std::size_t dim, std::size_t iterations,
                    std::size_t repeats, std::uint64_t seed) {
  if (repeats == 0) throw ContractError("bench: repeats must be positive");
  Rng rng(mix_seed(seed, m, dim));
  Matrix rows(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < rows.size(); ++i) rows.data()[i] = rng.normal();
  TimedCase c;
  c.method = method;
  c.m = m;
  c.dim = dim;
  c.iterations = iterations;
  c.G = ConstraintMatrix(rows, true);
  c.g = random_vector(rng, dim);
  if (!c.G.empty()) c.eta = stepsize(power_iteration(c.G, seeded_unit_vector(m, seed), 3), 0.7);
  c.repeats = repeats;
  return c;
}

// Warmup calls per case first, then timed calls round-robin over the cases
// so slow periods of a shared machine spread over all cells.
void time_cases(std::vector<TimedCase>& cases, std::size_t warmup) {
  std::size_t rounds = 0;
  for (auto& c : cases) {
    for (std::size_t i = 0; i < warmup; ++i) g_sink = g_sink + c.call();
    c.times.clear();
    rounds = std::max(rounds, c.repeats);
  }
  for (std::size_t round = 0; round < rounds; ++round) {
    for (auto& c : cases) {
      if (round >= c.repeats) continue;
      const auto t0 = clock_type::now();
      const double v = c.call();
      const auto t1 = clock_type::now();
      g_sink = g_sink + v;
      c.times.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
  }
}

}  // namespace

BenchCell time_projector(const std::string& method, std::size_t m, std::size_t dim, std::size_t iterations,
                         std::size_t warmup, std::size_t repeats, std::uint64_t seed) {
  std::vector<TimedCase> cases;
  cases.push_back(make_case(method, m, dim, iterations, repeats, seed));
  time_cases(cases, warmup);
  return cases[0].cell();
}

BenchReport run_bench(const BenchConfig& config) {
  std::vector<TimedCase> cases;
  for (std::size_t K : config.iterations) {
    for (std::size_t m : config.ms) {
      for (std::size_t d : config.dims) cases.push_back(make_case("igem", m, d, K, config.repeats, config.seed));
    }
  }
  const std::size_t n_grid = cases.size();
  for (const char* method : {"agem", "igem", "gem_exact"}) {
    cases.push_back(make_case(method, 0, config.order_dim, config.order_iterations, config.repeats, config.seed));
  }
  cases.push_back(make_case("agem", config.order_m, config.order_dim, 0, config.repeats, config.seed));
  cases.push_back(
      make_case("igem", config.order_m, config.order_dim, config.order_iterations, config.repeats, config.seed));
  cases.push_back(make_case("gem_exact", config.order_m, config.order_dim, 0, config.exact_repeats, config.seed));
  cases.push_back(
      make_case("igem", config.check_m, config.check_dim, config.check_iterations, config.repeats, config.seed));
  time_cases(cases, config.warmup);

  BenchReport report;
  std::vector<double> kmd, secs;
  for (std::size_t i = 0; i < n_grid; ++i) {
    report.grid.push_back(cases[i].cell());
    kmd.push_back(static_cast<double>(cases[i].iterations * cases[i].m * cases[i].dim));
    secs.push_back(report.grid.back().seconds.mean);
  }
  report.fit = linear_fit(kmd, secs);
  for (std::size_t i = n_grid; i < n_grid + 3; ++i) report.identity.push_back(cases[i].cell());
  for (std::size_t i = n_grid + 3; i < n_grid + 6; ++i) report.ordering.push_back(cases[i].cell());
  report.ordering_holds = report.ordering[0].seconds.mean < report.ordering[1].seconds.mean &&
                          report.ordering[1].seconds.mean < report.ordering[2].seconds.mean;
  report.check = cases[n_grid + 6].cell();
  report.check_prediction =
      report.fit.slope * static_cast<double>(config.check_m * config.check_dim * config.check_iterations) +
      report.fit.intercept;
  report.check_relative_error =
      std::abs(report.check.seconds.mean - report.check_prediction) / std::abs(report.check_prediction);
  return report;
}

std::string bench_csv(const BenchReport& report) {
  std::string out = "section,method,m,dim,K,kmd,mean_s,std_s,n,log10_mean_s\n";
  auto row = [&](const char* section, const BenchCell& c) {
    const double kmd = static_cast<double>(c.iterations * c.m * c.dim);
    out += std::string(section) + "," + c.method + "," + std::to_string(c.m) + "," + std::to_string(c.dim) + "," +
           std::to_string(c.iterations) + "," + fmt(kmd) + "," + fmt(c.seconds.mean) + "," + fmt(c.seconds.std) +
           "," + std::to_string(c.seconds.n) + "," +
           (c.seconds.mean > 0.0 ? fmt(std::log10(c.seconds.mean)) : std::string()) + "\n";
  };
  for (const auto& c : report.grid) row("grid", c);
  for (const auto& c : report.identity) row("identity", c);
  for (const auto& c : report.ordering) row("ordering", c);
  row("check", report.check);
  return out;
}

nlohmann::json to_json(const BenchReport& report) {
  nlohmann::json grid = nlohmann::json::array(), identity = nlohmann::json::array(),
                 ordering = nlohmann::json::array();
  for (const auto& c : report.grid) grid.push_back(cell_json(c));
  for (const auto& c : report.identity) identity.push_back(cell_json(c));
  for (const auto& c : report.ordering) ordering.push_back(cell_json(c));
  return {
      {"schema", kBenchSchema},
      {"grid", grid},
      {"fit", {{"slope", report.fit.slope}, {"intercept", report.fit.intercept}, {"r2", report.fit.r2}}},
      {"identity", identity},
      {"ordering", ordering},
      {"ordering_holds", report.ordering_holds},
      {"check",
       {{"cell", cell_json(report.check)},
        {"prediction_s", report.check_prediction},
        {"relative_error", report.check_relative_error}}},
      {"environment", environment_fingerprint()},
  };
}

}  // namespace gemlora
