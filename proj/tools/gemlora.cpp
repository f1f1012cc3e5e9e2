// Copyright 2026 The gemlora Authors
// SPDX-License-Identifier: Apache-2.0
//
// gemlora run | verify | bench | gen-data
//
// Exit codes: 0 success, 1 verification or run failure, 2 usage error
// (bad flags, invalid config, unreadable dataset).

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gemlora/bench.hpp"
#include "gemlora/config_io.hpp"
#include "gemlora/datagen.hpp"
#include "gemlora/errors.hpp"
#include "gemlora/metrics.hpp"
#include "gemlora/trainer.hpp"
#include "gemlora/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace gemlora;

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

enum class Kind { number, integer, boolean, text };

struct FieldFlag {
  const char* path;  // dotted config path below "train" or "stream"
  Kind kind;
  std::optional<std::string> value;
};

// Every overridable config field. Flags are spelled --<path>.
std::vector<FieldFlag> train_flags() {
  return {{"lr", Kind::number, {}},
          {"pgd_iteration", Kind::integer, {}},
          {"stepsize_factor", Kind::number, {}},
          {"train_mb_size", Kind::integer, {}},
          {"eval_mb_size", Kind::integer, {}},
          {"train_epochs", Kind::integer, {}},
          {"optimizer", Kind::text, {}},
          {"adamw.beta1", Kind::number, {}},
          {"adamw.beta2", Kind::number, {}},
          {"adamw.eps", Kind::number, {}},
          {"adamw.weight_decay", Kind::number, {}},
          {"patterns_per_exp", Kind::integer, {}},
          {"memory_size", Kind::integer, {}},
          {"proj_interval", Kind::integer, {}},
          {"margin.memory_strength", Kind::number, {}},
          {"margin.enabled", Kind::boolean, {}},
          {"normalize_rows", Kind::boolean, {}},
          {"power_iters", Kind::integer, {}},
          {"spectral_refresh", Kind::integer, {}},
          {"skip_feasible", Kind::boolean, {}},
          {"violation_tol", Kind::number, {}},
          {"thin_qr", Kind::boolean, {}},
          {"enumeration_limit", Kind::integer, {}},
          {"eval_every", Kind::integer, {}},
          {"model.hidden", Kind::integer, {}},
          {"model.rank", Kind::integer, {}},
          {"model.alpha", Kind::number, {}},
          {"model.activation", Kind::text, {}},
          {"pretrain.steps", Kind::integer, {}},
          {"pretrain.lr", Kind::number, {}},
          {"pretrain.batch_size", Kind::integer, {}},
          {"pretrain_pool", Kind::integer, {}}};
}

std::vector<FieldFlag> stream_flags() {
  return {{"n_classes", Kind::integer, {}},
          {"feature_dim", Kind::integer, {}},
          {"samples_per_experience", Kind::integer, {}},
          {"prior_peak", Kind::number, {}},
          {"class_separation", Kind::number, {}},
          {"noise_scale", Kind::number, {}},
          {"geometry_seed", Kind::integer, {}}};
}

struct StreamAndTrainFlags {
  std::vector<FieldFlag> train = train_flags();
  std::vector<FieldFlag> stream = stream_flags();
  std::optional<std::size_t> n_experiences;
};

void add_field_flags(CLI::App* app, std::vector<FieldFlag>& flags, const std::string& group) {
  for (auto& f : flags) app->add_option(std::string("--") + f.path, f.value)->group(group);
}

json parse_flag_value(const FieldFlag& f) {
  const std::string& v = *f.value;
  if (f.kind == Kind::text) return v;
  if (f.kind == Kind::boolean) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(f.path, "expected true or false, got '" + v + "'");
  }
  json j;
  try {
    j = json::parse(v);
  } catch (const json::parse_error&) {
    throw ConfigError(f.path, "expected a number, got '" + v + "'");
  }
  if (f.kind == Kind::integer && !j.is_number_integer()) throw ConfigError(f.path, "expected an integer, got '" + v + "'");
  if (!j.is_number()) throw ConfigError(f.path, "expected a number, got '" + v + "'");
  return j;
}

void apply_flags(json& section, const std::vector<FieldFlag>& flags) {
  for (const auto& f : flags) {
    if (!f.value) continue;
    std::string p = f.path;
    for (auto& c : p) {
      if (c == '.') c = '/';
    }
    section[json::json_pointer("/" + p)] = parse_flag_value(f);
  }
}

RunConfig resolve_config(const std::string& config_path, const StreamAndTrainFlags& flags,
                         const std::optional<std::string>& data) {
  RunConfig base = config_path.empty() ? RunConfig{} : load_run_config(config_path);
  json j = to_json(base);
  apply_flags(j["train"], flags.train);
  apply_flags(j["stream"], flags.stream);
  if (flags.n_experiences) {
    j["train"]["n_experiences"] = *flags.n_experiences;
    j["stream"]["n_experiences"] = *flags.n_experiences;
  }
  if (data) j["data_csv"] = *data;
  return run_config_from_json(j);
}

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || item.front() == '-') throw ConfigError("seeds", "invalid seed '" + item + "'");
    seeds.push_back(v);
  }
  if (seeds.empty()) throw ConfigError("seeds", "no seeds given");
  return seeds;
}

std::vector<Method> parse_methods(const std::string& text) {
  std::vector<Method> methods;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) methods.push_back(method_from_string(item));
  }
  if (methods.empty()) throw ConfigError("method", "no method given");
  return methods;
}

std::size_t worker_count() {
  const char* env = std::getenv("GEMLORA_WORKERS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) throw ConfigError("GEMLORA_WORKERS", std::string("expected a positive integer, got '") + env + "'");
  return static_cast<std::size_t>(v);
}

struct Cell {
  Method method;
  std::uint64_t seed;
};

struct CellResult {
  RunSummary summary;
  std::string error;
};

CellResult run_cell(const RunConfig& base, const Cell& cell, const fs::path& out_dir) {
  RunConfig cfg = base;
  cfg.train.method = cell.method;
  cfg.train.seed = cell.seed;
  cfg.stream.seed = cell.seed;

  Stream stream;
  Dataset pool;
  if (cfg.data_csv) {
    stream = ingest_csv(*cfg.data_csv, {cfg.stream.feature_dim, cfg.stream.n_classes}, cell.seed);
  } else {
    stream = generate_stream(cfg.stream);
    pool = generate_pretrain_pool(cfg.stream, cfg.train.pretrain_pool);
  }
  const RunOutput out = run_experiences(cfg.train, stream, pool);
  const MetricsBlock metrics = compute_metrics(out.accuracy, out.log.projection_times(), cfg.stream.n_classes);

  const std::string stem = to_string(cell.method) + "_seed" + std::to_string(cell.seed);
  write_file_atomic((out_dir / (stem + ".json")).string(), run_result_document(cfg, out, metrics).dump(2) + "\n");
  write_file_atomic((out_dir / (stem + "_steps.csv")).string(), step_log_csv(out.log));
  if (!out.log.curve.empty()) write_file_atomic((out_dir / (stem + "_curve.csv")).string(), curve_csv(out.log));
  return {{to_string(cell.method), cell.seed, metrics}, {}};
}

int cmd_run(const RunConfig& config, const std::vector<Method>& methods, const std::vector<std::uint64_t>& seeds,
            const fs::path& out_dir) {
  if (config.data_csv && !fs::exists(*config.data_csv)) {
    std::cerr << "gemlora: dataset not found: " << *config.data_csv << "\n";
    return kUsage;
  }
  fs::create_directories(out_dir);

  std::vector<Cell> cells;
  for (Method m : methods) {
    for (std::uint64_t s : seeds) cells.push_back({m, s});
  }
  std::vector<CellResult> results(cells.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      try {
        results[i] = run_cell(config, cells[i], out_dir);
        std::lock_guard<std::mutex> lock(log_mutex);
        const auto& m = results[i].summary.metrics;
        std::cerr << to_string(cells[i].method) << " seed " << cells[i].seed << ": avg_acc " << m.avg_acc
                  << " forgetting " << (m.forgetting ? std::to_string(*m.forgetting) : "null") << "\n";
      } catch (const std::exception& e) {
        results[i].error = e.what();
      }
    }
  };
  const std::size_t n_workers = std::min(worker_count(), cells.size());
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < n_workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::vector<RunSummary> summaries;
  int status = kOk;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (!results[i].error.empty()) {
      std::cerr << "gemlora: " << to_string(cells[i].method) << " seed " << cells[i].seed << " failed: "
                << results[i].error << "\n";
      status = kFailure;
    } else {
      summaries.push_back(results[i].summary);
    }
  }
  if (!summaries.empty()) {
    write_file_atomic((out_dir / "aggregate.json").string(), aggregate_document(summaries).dump(2) + "\n");
  }
  return status;
}

int cmd_verify(const std::string& suite, const std::string& out_path) {
  std::vector<std::string> names = suite == "all" ? suite_names() : std::vector<std::string>{suite};
  json reports = json::array();
  bool ok = true;
  for (const auto& name : names) {
    const SuiteReport r = run_suite(name);
    for (const auto& p : r.properties) {
      std::cerr << (p.passed ? "[PASS] " : "[FAIL] ") << name << "." << p.name << "\n";
    }
    ok = ok && r.passed();
    reports.push_back(to_json(r));
  }
  const json doc = names.size() == 1 ? reports[0] : json{{"schema", kVerifySchema}, {"passed", ok}, {"suites", reports}};
  if (!out_path.empty()) {
    write_file_atomic(out_path, doc.dump(2) + "\n");
  } else {
    std::cout << doc.dump(2) << "\n";
  }
  return ok ? kOk : kFailure;
}

int cmd_bench(const BenchConfig& config, const fs::path& out_dir) {
  const BenchReport report = run_bench(config);
  std::printf("%-10s %3s %7s %2s %14s %14s\n", "method", "m", "d", "K", "mean_s", "std_s");
  auto print = [](const BenchCell& c) {
    std::printf("%-10s %3zu %7zu %2zu %14.6e %14.6e\n", c.method.c_str(), c.m, c.dim, c.iterations, c.seconds.mean,
                c.seconds.std);
  };
  for (const auto& c : report.grid) print(c);
  std::printf("fit: time = %.6e * K*m*d + %.6e   R^2 = %.4f\n", report.fit.slope, report.fit.intercept, report.fit.r2);
  std::printf("identity (m = 0):\n");
  for (const auto& c : report.identity) print(c);
  std::printf("ordering:\n");
  for (const auto& c : report.ordering) print(c);
  std::printf("ordering agem < igem < gem_exact: %s\n", report.ordering_holds ? "holds" : "violated");
  std::printf("held-out cell: measured %.6e predicted %.6e relative error %.3f\n", report.check.seconds.mean,
              report.check_prediction, report.check_relative_error);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_file_atomic((out_dir / "bench.csv").string(), bench_csv(report));
    write_file_atomic((out_dir / "bench.json").string(), to_json(report).dump(2) + "\n");
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gemlora: gradient-projection continual learning with low-rank adapters"};
  app.require_subcommand(1);

  StreamAndTrainFlags run_flags;
  std::string config_path, seeds_text = "0", methods_text = "igem", out_dir = "results";
  std::optional<std::string> data_path;
  CLI::App* run = app.add_subcommand("run", "train over a (method x seed) grid and write result documents");
  run->add_option("--config", config_path, "JSON config (schema gemlora.config/1)");
  run->add_option("--data", data_path, "CSV dataset instead of the synthetic stream");
  run->add_option("--method", methods_text, "comma-separated methods: naive, agem, igem, gem_exact");
  run->add_option("--seeds", seeds_text, "comma-separated seeds, e.g. 0,2,5,7,11");
  run->add_option("--n_experiences", run_flags.n_experiences, "number of experiences (train and stream)");
  run->add_option("--out", out_dir, "output directory");
  add_field_flags(run, run_flags.train, "Train");
  add_field_flags(run, run_flags.stream, "Stream");

  std::string suite = "all", verify_out;
  CLI::App* verify = app.add_subcommand("verify", "run a property suite");
  verify->add_option("suite", suite, "projector, convergence, gradients, metrics, or all");
  verify->add_option("--out", verify_out, "write the JSON report here instead of stdout");

  BenchConfig bench_config;
  std::string bench_out;
  CLI::App* bench = app.add_subcommand("bench", "time the projectors over an (m, d, K) grid");
  bench->add_option("--repeats", bench_config.repeats, "timed calls per cell");
  bench->add_option("--exact_repeats", bench_config.exact_repeats, "timed calls for gem_exact");
  bench->add_option("--warmup", bench_config.warmup, "discarded calls per cell (at least 5)")->check(CLI::Range(5, 1000000));
  bench->add_option("--seed", bench_config.seed, "instance seed");
  bench->add_option("--out", bench_out, "directory for bench.csv and bench.json");

  StreamAndTrainFlags gen_flags;
  std::string gen_config, gen_out = "stream.csv";
  std::uint64_t gen_seed = 0;
  CLI::App* gen = app.add_subcommand("gen-data", "write the synthetic stream as CSV");
  gen->add_option("--config", gen_config, "JSON config; only the stream section is used");
  gen->add_option("--seed", gen_seed, "stream seed");
  gen->add_option("--n_experiences", gen_flags.n_experiences, "number of experiences");
  gen->add_option("--out", gen_out, "output CSV path");
  add_field_flags(gen, gen_flags.stream, "Stream");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*run) {
      const RunConfig config = resolve_config(config_path, run_flags, data_path);
      return cmd_run(config, parse_methods(methods_text), parse_seeds(seeds_text), out_dir);
    }
    if (*verify) return cmd_verify(suite, verify_out);
    if (*bench) return cmd_bench(bench_config, bench_out);
    if (*gen) {
      RunConfig config = resolve_config(gen_config, gen_flags, std::nullopt);
      config.stream.seed = gen_seed;
      write_stream_csv(generate_stream(config.stream), gen_out);
      std::cerr << "wrote " << gen_out << "\n";
      return kOk;
    }
  } catch (const ConfigError& e) {
    std::cerr << "gemlora: invalid configuration: " << e.what() << "\n";
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "gemlora: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "gemlora: " << e.what() << "\n";
    return kFailure;
  }
  return kUsage;
}
