// Copyright 2026 The gemlora Authors
// SPDX-License-Identifier: Apache-2.0
//
// Projection-overhead benchmark. Each timed call sees a fixed random G
// (row-normalized) and gradient g; the first `warmup` calls of every cell are
// discarded.
//
//   agem:      average the rows into g_ref, then the closed form
//   igem:      pgd_project from lambda = 0 with a precomputed eta
//   gem_exact: exact_qp_project

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gemlora/metrics.hpp"

namespace gemlora {

struct BenchConfig {
  // igem grid for the cost fit.
  std::vector<std::size_t> ms{2, 4, 8};
  std::vector<std::size_t> dims{25000, 50000, 100000};
  std::vector<std::size_t> iterations{2, 4, 6};
  // Ordering cell.
  std::size_t order_m = 8;
  std::size_t order_dim = 100000;
  std::size_t order_iterations = 3;
  // Held-out prediction cell.
  std::size_t check_m = 2;
  std::size_t check_dim = 100000;
  std::size_t check_iterations = 3;

  std::size_t warmup = 5;
  std::size_t repeats = 60;
  std::size_t exact_repeats = 5;
  std::uint64_t seed = 7;
};

struct BenchCell {
  std::string method;
  std::size_t m = 0;
  std::size_t dim = 0;
  std::size_t iterations = 0;  // K for igem, 0 otherwise
  MeanStd seconds;
};

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

// Ordinary least squares y ~ a x + b.
LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y);

struct BenchReport {
  std::vector<BenchCell> grid;      // igem, one per (K, m, d)
  LinearFit fit;                    // grid time vs K * m * d
  std::vector<BenchCell> identity;  // m = 0, each method
  std::vector<BenchCell> ordering;  // agem, igem, gem_exact at the ordering cell
  bool ordering_holds = false;
  BenchCell check;                  // igem at the held-out cell
  double check_prediction = 0.0;
  double check_relative_error = 0.0;
};

BenchReport run_bench(const BenchConfig& config);

// Mean seconds of one projector on a random (m, d) instance.
BenchCell time_projector(const std::string& method, std::size_t m, std::size_t dim, std::size_t iterations,
                         std::size_t warmup, std::size_t repeats, std::uint64_t seed);

// method,m,dim,K,kmd,mean_s,std_s,n,log10_mean_s
std::string bench_csv(const BenchReport& report);
nlohmann::json to_json(const BenchReport& report);

}  // namespace gemlora
