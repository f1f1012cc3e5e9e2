// Copyright 2026 The gemlora Authors
// SPDX-License-Identifier: Apache-2.0

#include "gemlora/datagen.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

#include "gemlora/errors.hpp"
#include "gemlora/rng.hpp"

namespace gemlora {

namespace {

int draw_label(Rng& rng, const std::vector<double>& prior) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t c = 0; c < prior.size(); ++c) {
    acc += prior[c];
    if (u < acc) return static_cast<int>(c);
  }
  // Rounding slack: last class with positive mass.
  for (std::size_t c = prior.size(); c-- > 0;) {
    if (prior[c] > 0.0) return static_cast<int>(c);
  }
  return 0;
}

Example draw_example(Rng& rng, const Matrix& means, double noise, int label) {
  Example ex;
  ex.label = label;
  ex.x = means.row(label).transpose();
  for (auto& v : ex.x) v += noise * rng.normal();
  return ex;
}

void assign_split(ExperienceSplit& split, Dataset rows, std::uint64_t seed) {
  const auto mask = split_mask(seed, split.experience_id, rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (mask[r]) {
      split.test.push_back(std::move(rows[r]));
      split.test_rows.push_back(r);
    } else {
      split.train.push_back(std::move(rows[r]));
      split.train_rows.push_back(r);
    }
  }
}

}  // namespace

std::vector<std::vector<double>> resolve_prior_schedule(const StreamSpec& spec) {
  if (spec.n_classes < 2) throw ConfigError("stream.n_classes", "must be at least 2");
  if (spec.n_experiences == 0) throw ConfigError("stream.n_experiences", "must be positive");
  std::vector<std::vector<double>> schedule = spec.prior_schedule;
  if (schedule.empty()) {
    if (!(spec.prior_peak >= 0.0 && spec.prior_peak <= 1.0)) throw ConfigError("stream.prior_peak", "must lie in [0, 1]");
    const double rest = (1.0 - spec.prior_peak) / static_cast<double>(spec.n_classes - 1);
    for (std::size_t e = 0; e < spec.n_experiences; ++e) {
      std::vector<double> p(spec.n_classes, rest);
      p[e % spec.n_classes] = spec.prior_peak;
      schedule.push_back(std::move(p));
    }
  }
  if (schedule.size() != spec.n_experiences) {
    throw ConfigError("stream.prior_schedule", "has " + std::to_string(schedule.size()) + " rows for " +
                                                   std::to_string(spec.n_experiences) + " experiences");
  }
  std::vector<bool> ever_positive(spec.n_classes, false);
  for (std::size_t e = 0; e < schedule.size(); ++e) {
    const auto& p = schedule[e];
    if (p.size() != spec.n_classes) {
      throw ConfigError("stream.prior_schedule", "row " + std::to_string(e) + " has " + std::to_string(p.size()) +
                                                     " entries for " + std::to_string(spec.n_classes) + " classes");
    }
    double sum = 0.0;
    for (std::size_t c = 0; c < p.size(); ++c) {
      if (!(p[c] >= 0.0)) throw ConfigError("stream.prior_schedule", "negative probability in row " + std::to_string(e));
      sum += p[c];
      if (p[c] > 0.0) ever_positive[c] = true;
    }
    if (std::abs(sum - 1.0) > 1e-12) {
      throw ConfigError("stream.prior_schedule", "row " + std::to_string(e) + " sums to " + std::to_string(sum));
    }
  }
  for (std::size_t c = 0; c < spec.n_classes; ++c) {
    if (!ever_positive[c]) {
      std::cerr << "warning: class " << c << " has zero probability in every experience\n";
    }
  }
  return schedule;
}

Matrix class_means(const StreamSpec& spec) {
  if (spec.feature_dim == 0) throw ConfigError("stream.feature_dim", "must be positive");
  Rng rng(mix_seed(spec.geometry_seed, 0x6d65616eULL));
  Matrix means(static_cast<Eigen::Index>(spec.n_classes), static_cast<Eigen::Index>(spec.feature_dim));
  for (Eigen::Index c = 0; c < means.rows(); ++c) {
    for (auto& v : means.row(c)) v = rng.normal();
    means.row(c) *= spec.class_separation / means.row(c).norm();
  }
  return means;
}

std::size_t test_count(std::size_t n) { return n == 0 ? 0 : std::max<std::size_t>(1, n / 5); }

std::vector<bool> split_mask(std::uint64_t seed, std::size_t experience_id, std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<std::uint64_t> keys(n);
  for (std::size_t r = 0; r < n; ++r) keys[r] = mix_seed(seed, experience_id, r);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return keys[a] != keys[b] ? keys[a] < keys[b] : a < b;
  });
  std::vector<bool> mask(n, false);
  for (std::size_t i = 0; i < test_count(n); ++i) mask[order[i]] = true;
  return mask;
}

void validate(const StreamSpec& spec) {
  resolve_prior_schedule(spec);
  if (spec.feature_dim == 0) throw ConfigError("stream.feature_dim", "must be positive");
  if (spec.samples_per_experience < 2) throw ConfigError("stream.samples_per_experience", "must be at least 2");
  if (!(spec.noise_scale > 0.0) || !std::isfinite(spec.noise_scale)) {
    throw ConfigError("stream.noise_scale", "must be positive");
  }
  if (!(spec.class_separation >= 0.0) || !std::isfinite(spec.class_separation)) {
    throw ConfigError("stream.class_separation", "must be nonnegative");
  }
}

Stream generate_stream(const StreamSpec& spec) {
  validate(spec);
  const auto schedule = resolve_prior_schedule(spec);
  const Matrix means = class_means(spec);

  std::vector<std::size_t> order(spec.n_experiences);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng order_rng(mix_seed(spec.seed, 0x6f72646572ULL));
  order_rng.shuffle(std::span<std::size_t>(order));

  Stream stream(spec.n_experiences);
  for (std::size_t pos = 0; pos < spec.n_experiences; ++pos) {
    ExperienceSplit& split = stream[pos];
    split.experience_id = pos;
    split.prior_index = order[pos];
    split.row_offset = pos * spec.samples_per_experience;
    Rng rng(mix_seed(spec.seed, 0x73616d70ULL, pos));
    Dataset rows;
    rows.reserve(spec.samples_per_experience);
    for (std::size_t r = 0; r < spec.samples_per_experience; ++r) {
      rows.push_back(draw_example(rng, means, spec.noise_scale, draw_label(rng, schedule[order[pos]])));
    }
    assign_split(split, std::move(rows), spec.seed);
  }
  return stream;
}

Dataset generate_pretrain_pool(const StreamSpec& spec, std::size_t n) {
  const Matrix means = class_means(spec);
  const std::vector<double> uniform(spec.n_classes, 1.0 / static_cast<double>(spec.n_classes));
  Rng rng(mix_seed(spec.seed, 0x706f6f6cULL));
  Dataset pool;
  pool.reserve(n);
  for (std::size_t i = 0; i < n; ++i) pool.push_back(draw_example(rng, means, spec.noise_scale, draw_label(rng, uniform)));
  return pool;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char ch) { return !std::isspace(ch); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

double parse_double(const std::string& cell, std::size_t line, const std::string& column) {
  const std::string t = trim(cell);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size() || !std::isfinite(v)) {
    throw DataError("line " + std::to_string(line) + ", column " + column + ": '" + cell + "' is not a finite number");
  }
  return v;
}

long long parse_int(const std::string& cell, std::size_t line, const std::string& column) {
  const std::string t = trim(cell);
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) {
    throw DataError("line " + std::to_string(line) + ", column " + column + ": '" + cell + "' is not an integer");
  }
  return v;
}

}  // namespace

Stream ingest_csv(const std::string& path, const CsvSchema& schema, std::uint64_t seed) {
  if (schema.n_features == 0) throw ConfigError("schema.n_features", "must be positive");
  if (schema.n_classes < 2) throw ConfigError("schema.n_classes", "must be at least 2");
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset '" + path + "'");

  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw DataError("dataset '" + path + "' is empty");
  ++line_no;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM

  const auto header = split_fields(line);
  std::vector<std::string> expected;
  for (std::size_t f = 0; f < schema.n_features; ++f) expected.push_back("f" + std::to_string(f));
  expected.emplace_back("label");
  expected.emplace_back("experience");
  if (header.size() != expected.size()) {
    throw DataError("line 1: header has " + std::to_string(header.size()) + " columns, expected " +
                    std::to_string(expected.size()) + " (f0..f" + std::to_string(schema.n_features - 1) +
                    ",label,experience)");
  }
  for (std::size_t c = 0; c < expected.size(); ++c) {
    if (trim(header[c]) != expected[c]) {
      throw DataError("line 1: header column " + std::to_string(c + 1) + " is '" + header[c] + "', expected '" +
                      expected[c] + "'");
    }
  }

  std::map<long long, Dataset> by_experience;
  std::size_t data_rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != expected.size()) {
      throw DataError("line " + std::to_string(line_no) + ": " + std::to_string(fields.size()) + " fields, expected " +
                      std::to_string(expected.size()));
    }
    Example ex;
    ex.x.resize(static_cast<Eigen::Index>(schema.n_features));
    for (std::size_t f = 0; f < schema.n_features; ++f) {
      ex.x[static_cast<Eigen::Index>(f)] = parse_double(fields[f], line_no, expected[f]);
    }
    const long long label = parse_int(fields[schema.n_features], line_no, "label");
    if (label < 0 || static_cast<std::size_t>(label) >= schema.n_classes) {
      throw DataError("line " + std::to_string(line_no) + ", column label: " + std::to_string(label) + " outside [0, " +
                      std::to_string(schema.n_classes) + ")");
    }
    ex.label = static_cast<int>(label);
    const long long experience = parse_int(fields[schema.n_features + 1], line_no, "experience");
    if (experience < 0) {
      throw DataError("line " + std::to_string(line_no) + ", column experience: negative id " + std::to_string(experience));
    }
    by_experience[experience].push_back(std::move(ex));
    ++data_rows;
  }
  if (data_rows == 0) throw DataError("dataset '" + path + "' has no data rows");

  Stream stream;
  std::size_t offset = 0;
  for (auto& [id, rows] : by_experience) {
    ExperienceSplit split;
    split.experience_id = static_cast<std::size_t>(id);
    split.prior_index = static_cast<std::size_t>(id);
    split.row_offset = offset;
    offset += rows.size();
    assign_split(split, std::move(rows), seed);
    stream.push_back(std::move(split));
  }
  return stream;
}

void write_stream_csv(const Stream& stream, const std::string& path) {
  if (stream.empty()) throw ContractError("write_stream_csv: empty stream");
  const std::size_t n_features = static_cast<std::size_t>(
      (!stream.front().train.empty() ? stream.front().train : stream.front().test).front().x.size());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  for (std::size_t f = 0; f < n_features; ++f) out << 'f' << f << ',';
  out << "label,experience\n";
  char buf[64];
  for (const auto& split : stream) {
    std::vector<const Example*> by_row(split.rows(), nullptr);
    for (std::size_t i = 0; i < split.train.size(); ++i) by_row.at(split.train_rows[i]) = &split.train[i];
    for (std::size_t i = 0; i < split.test.size(); ++i) by_row.at(split.test_rows[i]) = &split.test[i];
    for (const Example* ex : by_row) {
      for (Eigen::Index f = 0; f < ex->x.size(); ++f) {
        // Shortest round-trip representation.
        const auto res = std::to_chars(buf, buf + sizeof(buf), ex->x[f]);
        out.write(buf, res.ptr - buf);
        out << ',';
      }
      out << ex->label << ',' << split.experience_id << '\n';
    }
  }
  if (!out) throw DataError("failed writing '" + path + "'");
}

}  // namespace gemlora
