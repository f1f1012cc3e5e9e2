// Copyright 2026 The gemlora Authors
// SPDX-License-Identifier: Apache-2.0

#include "gemlora/config_io.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "gemlora/errors.hpp"

namespace gemlora {

using nlohmann::json;

namespace {

std::string join(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

// ConfigError::what() without the "<field>: " prefix.
std::string bare_message(const ConfigError& e) {
  const std::string what = e.what();
  const std::string head = e.field() + ": ";
  return (!e.field().empty() && what.rfind(head, 0) == 0) ? what.substr(head.size()) : what;
}

// Reads keys out of one JSON object and remembers which were consumed so
// leftovers can be reported.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {
    if (!j_.is_object()) throw ConfigError(prefix_, "expected an object");
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    out = convert<T>(*it, join(prefix_, key));
  }

  const json* sub(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(join(prefix_, it.key()), "unknown field");
    }
  }

  const std::string& prefix() const { return prefix_; }

 private:
  template <typename T>
  static T convert(const json& v, const std::string& field) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(field, "expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) throw ConfigError(field, "expected a number");
      return v.get<double>();
    } else if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
      if (v.is_number_unsigned()) return static_cast<T>(v.get<std::uint64_t>());
      if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<T>(v.get<std::int64_t>());
      throw ConfigError(field, "expected a non-negative integer");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(field, "expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_same_v<T, Method>) {
      try {
        return method_from_string(convert<std::string>(v, field));
      } catch (const ConfigError& e) {
        throw ConfigError(field, bare_message(e));
      }
    } else if constexpr (std::is_same_v<T, OptimizerKind>) {
      try {
        return optimizer_from_string(convert<std::string>(v, field));
      } catch (const ConfigError& e) {
        throw ConfigError(field, bare_message(e));
      }
    } else if constexpr (std::is_same_v<T, Activation>) {
      try {
        return activation_from_string(convert<std::string>(v, field));
      } catch (const ConfigError& e) {
        throw ConfigError(field, bare_message(e));
      }
    } else if constexpr (std::is_same_v<T, std::vector<std::vector<double>>>) {
      if (!v.is_array()) throw ConfigError(field, "expected an array of arrays");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i) {
        const std::string f = field + "[" + std::to_string(i) + "]";
        if (!v[i].is_array()) throw ConfigError(f, "expected an array");
        std::vector<double> row;
        for (std::size_t k = 0; k < v[i].size(); ++k) {
          row.push_back(convert<double>(v[i][k], f + "[" + std::to_string(k) + "]"));
        }
        out.push_back(std::move(row));
      }
      return out;
    } else {
      static_assert(sizeof(T) == 0, "unsupported field type");
    }
  }

  const json& j_;
  std::string prefix_;
  std::set<std::string> seen_;
};

void check_schema(ObjectReader& r, const std::string& expected) {
  std::string schema = expected;
  r.read("schema", schema);
  if (schema != expected) throw ConfigError(join(r.prefix(), "schema"), "expected \"" + expected + "\", got \"" + schema + "\"");
}

ModelShape model_from_json(const json& j, const std::string& prefix) {
  ModelShape m;
  ObjectReader r(j, prefix);
  r.read("input", m.input);
  r.read("hidden", m.hidden);
  r.read("classes", m.classes);
  r.read("rank", m.rank);
  r.read("alpha", m.alpha);
  r.read("activation", m.activation);
  r.finish();
  return m;
}

TrainConfig train_from_json(const json& j, const std::string& prefix) {
  TrainConfig c;
  ObjectReader r(j, prefix);
  r.read("method", c.method);
  r.read("lr", c.lr);
  r.read("pgd_iteration", c.pgd_iteration);
  r.read("stepsize_factor", c.stepsize_factor);
  r.read("train_mb_size", c.train_mb_size);
  r.read("eval_mb_size", c.eval_mb_size);
  r.read("train_epochs", c.train_epochs);
  r.read("n_experiences", c.n_experiences);
  r.read("seed", c.seed);
  r.read("optimizer", c.optimizer);
  if (const json* a = r.sub("adamw")) {
    ObjectReader ar(*a, join(prefix, "adamw"));
    ar.read("beta1", c.adamw.beta1);
    ar.read("beta2", c.adamw.beta2);
    ar.read("eps", c.adamw.eps);
    ar.read("weight_decay", c.adamw.weight_decay);
    ar.finish();
  }
  r.read("patterns_per_exp", c.patterns_per_exp);
  r.read("memory_size", c.memory_size);
  r.read("proj_interval", c.proj_interval);
  if (const json* m = r.sub("margin")) {
    ObjectReader mr(*m, join(prefix, "margin"));
    mr.read("memory_strength", c.margin.memory_strength);
    mr.read("enabled", c.margin.enabled);
    mr.finish();
  }
  r.read("normalize_rows", c.normalize_rows);
  r.read("power_iters", c.power_iters);
  r.read("spectral_refresh", c.spectral_refresh);
  r.read("skip_feasible", c.skip_feasible);
  r.read("violation_tol", c.violation_tol);
  r.read("thin_qr", c.thin_qr);
  r.read("enumeration_limit", c.enumeration_limit);
  r.read("eval_every", c.eval_every);
  if (const json* m = r.sub("model")) c.model = model_from_json(*m, join(prefix, "model"));
  if (const json* p = r.sub("pretrain")) {
    ObjectReader pr(*p, join(prefix, "pretrain"));
    pr.read("steps", c.pretrain.steps);
    pr.read("lr", c.pretrain.lr);
    pr.read("batch_size", c.pretrain.batch_size);
    pr.read("seed", c.pretrain.seed);
    pr.finish();
  }
  r.read("pretrain_pool", c.pretrain_pool);
  r.finish();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(join(prefix, e.field()), bare_message(e));
  }
  return c;
}

StreamSpec stream_from_json(const json& j, const std::string& prefix) {
  StreamSpec s;
  ObjectReader r(j, prefix);
  r.read("n_classes", s.n_classes);
  r.read("n_experiences", s.n_experiences);
  r.read("feature_dim", s.feature_dim);
  r.read("samples_per_experience", s.samples_per_experience);
  r.read("prior_schedule", s.prior_schedule);
  r.read("prior_peak", s.prior_peak);
  r.read("class_separation", s.class_separation);
  r.read("noise_scale", s.noise_scale);
  r.read("geometry_seed", s.geometry_seed);
  r.read("seed", s.seed);
  r.finish();
  validate(s);
  return s;
}

std::size_t line_of_offset(const std::string& text, std::size_t offset, std::size_t& column) {
  offset = std::min(offset, text.size());
  std::size_t line = 1;
  std::size_t line_start = 0;
  for (std::size_t i = 0; i < offset; ++i) {
    if (text[i] == '\n') {
      ++line;
      line_start = i + 1;
    }
  }
  column = offset - line_start + 1;
  return line;
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

json to_json(const TrainConfig& c) {
  return json{
      {"method", to_string(c.method)},
      {"lr", c.lr},
      {"pgd_iteration", c.pgd_iteration},
      {"stepsize_factor", c.stepsize_factor},
      {"train_mb_size", c.train_mb_size},
      {"eval_mb_size", c.eval_mb_size},
      {"train_epochs", c.train_epochs},
      {"n_experiences", c.n_experiences},
      {"seed", c.seed},
      {"optimizer", to_string(c.optimizer)},
      {"adamw",
       {{"beta1", c.adamw.beta1}, {"beta2", c.adamw.beta2}, {"eps", c.adamw.eps}, {"weight_decay", c.adamw.weight_decay}}},
      {"patterns_per_exp", c.patterns_per_exp},
      {"memory_size", c.memory_size},
      {"proj_interval", c.proj_interval},
      {"margin", {{"memory_strength", c.margin.memory_strength}, {"enabled", c.margin.enabled}}},
      {"normalize_rows", c.normalize_rows},
      {"power_iters", c.power_iters},
      {"spectral_refresh", c.spectral_refresh},
      {"skip_feasible", c.skip_feasible},
      {"violation_tol", c.violation_tol},
      {"thin_qr", c.thin_qr},
      {"enumeration_limit", c.enumeration_limit},
      {"eval_every", c.eval_every},
      {"model",
       {{"input", c.model.input},
        {"hidden", c.model.hidden},
        {"classes", c.model.classes},
        {"rank", c.model.rank},
        {"alpha", c.model.alpha},
        {"activation", to_string(c.model.activation)}}},
      {"pretrain",
       {{"steps", c.pretrain.steps},
        {"lr", c.pretrain.lr},
        {"batch_size", c.pretrain.batch_size},
        {"seed", c.pretrain.seed}}},
      {"pretrain_pool", c.pretrain_pool},
  };
}

json to_json(const StreamSpec& s) {
  return json{
      {"n_classes", s.n_classes},
      {"n_experiences", s.n_experiences},
      {"feature_dim", s.feature_dim},
      {"samples_per_experience", s.samples_per_experience},
      {"prior_schedule", s.prior_schedule},
      {"prior_peak", s.prior_peak},
      {"class_separation", s.class_separation},
      {"noise_scale", s.noise_scale},
      {"geometry_seed", s.geometry_seed},
      {"seed", s.seed},
  };
}

json to_json(const RunConfig& c) {
  json j{{"schema", kConfigSchema}, {"train", to_json(c.train)}, {"stream", to_json(c.stream)}};
  j["data_csv"] = c.data_csv ? json(*c.data_csv) : json(nullptr);
  return j;
}

TrainConfig train_config_from_json(const json& j) { return train_from_json(j, "train"); }
StreamSpec stream_spec_from_json(const json& j) { return stream_from_json(j, "stream"); }

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  ObjectReader r(j, "");
  check_schema(r, kConfigSchema);
  if (const json* t = r.sub("train")) c.train = train_from_json(*t, "train");
  if (const json* s = r.sub("stream")) c.stream = stream_from_json(*s, "stream");
  if (const json* d = r.sub("data_csv")) {
    if (d->is_string()) {
      c.data_csv = d->get<std::string>();
    } else if (!d->is_null()) {
      throw ConfigError("data_csv", "expected a string or null");
    }
  }
  r.finish();
  return c;
}

RunConfig parse_run_config(const std::string& text, const std::string& source) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t column = 0;
    const std::size_t line = line_of_offset(text, e.byte == 0 ? 0 : e.byte - 1, column);
    throw ConfigError("", source + ":" + std::to_string(line) + ":" + std::to_string(column) + ": invalid JSON");
  }
  return run_config_from_json(j);
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("", "cannot open config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path);
}

json environment_fingerprint() {
  using clock = std::chrono::steady_clock;
  const double tick = static_cast<double>(clock::period::num) / static_cast<double>(clock::period::den);
  return json{
      {"version", kVersion},
      {"precision", "float64"},
      {"mantissa_digits", std::numeric_limits<double>::digits},
      {"clock", "steady_clock"},
      {"clock_resolution_s", tick},
      {"compiler", __VERSION__},
  };
}

json to_json(const AccuracyMatrix& R) {
  json rows = json::array();
  for (std::size_t i = 0; i <= R.tasks(); ++i) rows.push_back(R.row(i));
  json j{{"tasks", R.tasks()}, {"rows", rows}};
  if (R.has_custom_baseline()) {
    const Vector b = R.baseline();
    j["baseline"] = std::vector<double>(b.data(), b.data() + b.size());
  }
  return j;
}

json to_json(const MetricsBlock& m) {
  return json{
      {"avg_acc", m.avg_acc},
      {"bwt", optional_number(m.bwt)},
      {"fwt", optional_number(m.fwt)},
      {"fwt_chance", optional_number(m.fwt_chance)},
      {"forgetting", optional_number(m.forgetting)},
      {"mpo", optional_number(m.mpo)},
      {"projections", m.projections},
  };
}

json run_result_document(const RunConfig& config, const RunOutput& output, const MetricsBlock& metrics) {
  json curve = json::array();
  for (const auto& p : output.log.curve) {
    curve.push_back({{"step", p.step}, {"task", p.task}, {"accuracies", p.accuracies}});
  }
  return json{
      {"schema", kRunSchema},
      {"config", to_json(config)},
      {"accuracy_matrix", to_json(output.accuracy)},
      {"metrics", to_json(metrics)},
      {"mpo", optional_number(metrics.mpo)},
      {"steps", output.log.steps.size()},
      {"curve", curve},
      {"diagnostics", output.log.diagnostics},
      {"environment", environment_fingerprint()},
  };
}

json aggregate_document(std::span<const RunSummary> runs) {
  std::vector<std::string> methods;
  for (const auto& r : runs) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
  }
  auto stat = [](const std::vector<double>& xs, std::size_t total) -> json {
    if (xs.empty()) return json{{"mean", nullptr}, {"std", nullptr}, {"n", 0}, {"missing", total}};
    const MeanStd ms = mean_std(xs);
    return json{{"mean", ms.mean}, {"std", ms.std}, {"n", ms.n}, {"missing", total - xs.size()}};
  };
  json per_method = json::object();
  for (const auto& name : methods) {
    std::vector<double> acc, bw, fw, fc, fg, mp;
    std::vector<std::uint64_t> seeds;
    std::size_t total = 0;
    for (const auto& r : runs) {
      if (r.method != name) continue;
      ++total;
      seeds.push_back(r.seed);
      acc.push_back(r.metrics.avg_acc);
      if (r.metrics.bwt) bw.push_back(*r.metrics.bwt);
      if (r.metrics.fwt) fw.push_back(*r.metrics.fwt);
      if (r.metrics.fwt_chance) fc.push_back(*r.metrics.fwt_chance);
      if (r.metrics.forgetting) fg.push_back(*r.metrics.forgetting);
      if (r.metrics.mpo) mp.push_back(*r.metrics.mpo);
    }
    per_method[name] = json{
        {"seeds", seeds},
        {"avg_acc", stat(acc, total)},
        {"bwt", stat(bw, total)},
        {"fwt", stat(fw, total)},
        {"fwt_chance", stat(fc, total)},
        {"forgetting", stat(fg, total)},
        {"mpo", stat(mp, total)},
    };
  }
  return json{{"schema", kAggregateSchema}, {"methods", per_method}, {"environment", environment_fingerprint()}};
}

std::string step_log_csv(const RunLog& log) {
  std::string out =
      "step,task,task_step,loss,constraints,projected,projection_time,lambda_norm,max_violation,"
      "unprojected_violation,min_raw_constraint,start_origin,timestamp\n";
  for (const auto& s : log.steps) {
    out += std::to_string(s.step) + "," + std::to_string(s.task) + "," + std::to_string(s.task_step) + "," +
           format_double(s.loss) + "," + std::to_string(s.constraints) + "," + (s.projected ? "1" : "0") + "," +
           format_double(s.projection_time) + "," + format_double(s.lambda_norm) + "," +
           format_double(s.max_violation) + "," + format_double(s.unprojected_violation) + "," +
           (s.min_raw_constraint ? format_double(*s.min_raw_constraint) : std::string()) + "," +
           (s.start_origin == DualOrigin::warm ? "warm" : "cold") + "," + format_double(s.timestamp) + "\n";
  }
  return out;
}

std::string curve_csv(const RunLog& log) {
  std::string out = "step,trained_task,eval_task,accuracy\n";
  for (const auto& p : log.curve) {
    for (std::size_t i = 0; i < p.accuracies.size(); ++i) {
      out += std::to_string(p.step) + "," + std::to_string(p.task) + "," + std::to_string(i) + "," +
             format_double(p.accuracies[i]) + "\n";
    }
  }
  return out;
}

void write_file_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp);
    out << content;
    out.flush();
    if (!out) throw DataError("write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw DataError("cannot rename " + tmp + " to " + path + ": " + ec.message());
  }
}

}  // namespace gemlora
