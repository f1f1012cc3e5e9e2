// Copyright 2026 The gemlora Authors
// SPDX-License-Identifier: Apache-2.0

#include "gemlora/adapter_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <sstream>

#include "gemlora/errors.hpp"
#include "gemlora/rng.hpp"

namespace gemlora {

namespace {

Vector activate(Activation a, const Vector& z) {
  switch (a) {
    case Activation::tanh:
      return z.array().tanh().matrix();
    case Activation::softplus:
      // log(1 + e^z), stable for large |z|
      return z.unaryExpr([](double v) { return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); });
  }
  return z;
}

// Derivative expressed through the pre-activation z and activation h.
Vector activation_slope(Activation a, const Vector& z, const Vector& h) {
  switch (a) {
    case Activation::tanh:
      return (1.0 - h.array().square()).matrix();
    case Activation::softplus:
      return z.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
  }
  return Vector::Ones(z.size());
}

struct LayerCache {
  Vector input;
  Vector projected;  // A x
  Vector pre;        // z
};

struct ForwardCache {
  LayerCache first;
  LayerCache second;
  Vector hidden;
  Vector logits;
};

Vector layer_forward(const LoraLayer& layer, const Vector& x, LayerCache* cache) {
  Vector ax = layer.A * x;
  Vector z = layer.base_weight * x + layer.base_bias + layer.scale() * (layer.B * ax);
  if (cache) {
    cache->input = x;
    cache->projected = std::move(ax);
    cache->pre = z;
  }
  return z;
}

ForwardCache forward_cached(const TinyMlp& model, const Vector& x) {
  const auto layers = model.layers();
  ForwardCache c;
  const Vector z1 = layer_forward(layers[0], x, &c.first);
  c.hidden = activate(model.shape().activation, z1);
  c.logits = layer_forward(layers[1], c.hidden, &c.second);
  return c;
}

void check_input(const TinyMlp& model, const Vector& x) {
  if (static_cast<std::size_t>(x.size()) != model.shape().input) {
    throw DimensionError("input has length " + std::to_string(x.size()) + ", model expects " +
                         std::to_string(model.shape().input));
  }
  if (!x.allFinite()) throw NumericError("input has non-finite entries");
}

void check_label(const TinyMlp& model, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= model.shape().classes) {
    throw DataError("label " + std::to_string(label) + " outside [0, " + std::to_string(model.shape().classes) + ")");
  }
}

void check_batch(const TinyMlp& model, std::span<const Example> batch) {
  if (batch.empty()) throw ContractError("batch must be nonempty");
  for (const auto& ex : batch) {
    check_input(model, ex.x);
    check_label(model, ex.label);
  }
}

// log-softmax cross-entropy and dL/dlogits for one example.
double cross_entropy(const Vector& logits, int label, Vector* dlogits) {
  const double mx = logits.maxCoeff();
  const Vector shifted = logits.array() - mx;
  const double log_norm = std::log(shifted.array().exp().sum());
  if (dlogits) {
    *dlogits = (shifted.array() - log_norm).exp().matrix();
    (*dlogits)[label] -= 1.0;
  }
  return log_norm - shifted[label];
}

struct LayerGrad {
  Matrix weight;
  Vector bias;
};

// dL/dW_eff and dL/db for both layers, summed (not averaged) over the batch.
std::vector<LayerGrad> effective_gradients(const TinyMlp& model, std::span<const Example> batch, double* loss_sum) {
  const auto layers = model.layers();
  std::vector<LayerGrad> grads(layers.size());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    grads[l].weight = Matrix::Zero(layers[l].base_weight.rows(), layers[l].base_weight.cols());
    grads[l].bias = Vector::Zero(layers[l].base_weight.rows());
  }
  const Matrix w2 = layers[1].effective_weight();
  double total = 0.0;
  Vector d2;
  for (const auto& ex : batch) {
    const ForwardCache c = forward_cached(model, ex.x);
    total += cross_entropy(c.logits, ex.label, &d2);
    grads[1].weight.noalias() += d2 * c.hidden.transpose();
    grads[1].bias += d2;
    const Vector d1 = (w2.transpose() * d2).cwiseProduct(activation_slope(model.shape().activation, c.first.pre, c.hidden));
    grads[0].weight.noalias() += d1 * ex.x.transpose();
    grads[0].bias += d1;
  }
  if (loss_sum) *loss_sum = total;
  return grads;
}

void write_row_major(Vector& out, std::size_t offset, const Matrix& m) {
  out.segment(static_cast<Eigen::Index>(offset), m.size()) = Eigen::Map<const Vector>(m.data(), m.size());
}

Matrix read_row_major(const Vector& in, std::size_t offset, Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  Eigen::Map<Vector>(m.data(), m.size()) = in.segment(static_cast<Eigen::Index>(offset), m.size());
  return m;
}

}  // namespace

std::string to_string(Activation a) {
  switch (a) {
    case Activation::tanh:
      return "tanh";
    case Activation::softplus:
      return "softplus";
  }
  return "tanh";
}

Activation activation_from_string(const std::string& name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "softplus") return Activation::softplus;
  throw ConfigError("activation", "unknown activation '" + name + "' (expected tanh or softplus)");
}

TinyMlp::TinyMlp(const ModelShape& shape, std::uint64_t seed) : shape_(shape) {
  if (shape.input == 0 || shape.hidden == 0 || shape.classes < 2) {
    throw ConfigError("model", "input and hidden must be positive and classes at least 2");
  }
  if (shape.rank == 0) throw ConfigError("model.rank", "adapter rank must be at least 1");
  const std::size_t max_rank = std::min({shape.input, shape.hidden, shape.classes});
  if (shape.rank > max_rank) {
    throw ConfigError("model.rank", "rank " + std::to_string(shape.rank) + " exceeds min layer dimension " +
                                         std::to_string(max_rank));
  }
  if (!(shape.alpha > 0.0)) throw ConfigError("model.alpha", "must be positive");

  Rng rng(mix_seed(seed, 0x6d6f64656cULL));
  const std::size_t dims[3] = {shape.input, shape.hidden, shape.classes};
  layers_.resize(2);
  for (std::size_t l = 0; l < 2; ++l) {
    const auto in = static_cast<Eigen::Index>(dims[l]);
    const auto out = static_cast<Eigen::Index>(dims[l + 1]);
    const auto r = static_cast<Eigen::Index>(shape.rank);
    LoraLayer& layer = layers_[l];
    layer.alpha = shape.alpha;
    layer.rank = shape.rank;
    const double w_scale = 1.0 / std::sqrt(static_cast<double>(in));
    layer.base_weight.resize(out, in);
    for (auto& w : layer.base_weight.reshaped()) w = w_scale * rng.normal();
    layer.base_bias = Vector::Zero(out);
    layer.B = Matrix::Zero(out, r);
    layer.A.resize(r, in);
    for (auto& a : layer.A.reshaped()) a = rng.uniform(-w_scale, w_scale);
  }
  build_layout();
}

void TinyMlp::build_layout() {
  layout_ = {};
  std::size_t offset = 0;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    for (const auto which : {AdapterFactor::B, AdapterFactor::A}) {
      const Matrix& m = which == AdapterFactor::B ? layer.B : layer.A;
      LayoutEntry e{l, which, static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()), offset};
      offset += e.size();
      layout_.entries.push_back(e);
    }
  }
  layout_.total = offset;
}

std::size_t TinyMlp::full_weight_dim() const noexcept {
  std::size_t n = 0;
  for (const auto& layer : layers_) n += static_cast<std::size_t>(layer.base_weight.size());
  return n;
}

Vector TinyMlp::adapter_params() const {
  Vector phi(static_cast<Eigen::Index>(layout_.total));
  for (const auto& e : layout_.entries) {
    const auto& layer = layers_[e.layer];
    write_row_major(phi, e.offset, e.which == AdapterFactor::B ? layer.B : layer.A);
  }
  return phi;
}

void TinyMlp::set_adapter_params(const Vector& phi) {
  if (static_cast<std::size_t>(phi.size()) != layout_.total) {
    throw DimensionError("adapter vector has length " + std::to_string(phi.size()) + ", layout expects " +
                         std::to_string(layout_.total));
  }
  if (!phi.allFinite()) throw NumericError("adapter vector has non-finite entries");
  for (const auto& e : layout_.entries) {
    auto& layer = layers_[e.layer];
    Matrix& target = e.which == AdapterFactor::B ? layer.B : layer.A;
    target = read_row_major(phi, e.offset, target.rows(), target.cols());
  }
}

void TinyMlp::set_alpha(double alpha) {
  if (!(alpha > 0.0)) throw ConfigError("model.alpha", "must be positive");
  shape_.alpha = alpha;
  for (auto& layer : layers_) layer.alpha = alpha;
}

Vector TinyMlp::forward(const Vector& x) const {
  check_input(*this, x);
  Vector logits = forward_cached(*this, x).logits;
  if (!logits.allFinite()) throw NumericError("forward produced non-finite logits");
  return logits;
}

double loss(const TinyMlp& model, std::span<const Example> batch) {
  check_batch(model, batch);
  double total = 0.0;
  for (const auto& ex : batch) total += cross_entropy(forward_cached(model, ex.x).logits, ex.label, nullptr);
  return total / static_cast<double>(batch.size());
}

LossAndGradient loss_and_gradient(const TinyMlp& model, std::span<const Example> batch) {
  check_batch(model, batch);
  const auto layers = model.layers();
  const LoraLayer& l1 = layers[0];
  const LoraLayer& l2 = layers[1];
  const double s1 = l1.scale();
  const double s2 = l2.scale();

  Matrix gB1 = Matrix::Zero(l1.B.rows(), l1.B.cols());
  Matrix gA1 = Matrix::Zero(l1.A.rows(), l1.A.cols());
  Matrix gB2 = Matrix::Zero(l2.B.rows(), l2.B.cols());
  Matrix gA2 = Matrix::Zero(l2.A.rows(), l2.A.cols());

  double total = 0.0;
  Vector d2;
  for (const auto& ex : batch) {
    const ForwardCache c = forward_cached(model, ex.x);
    total += cross_entropy(c.logits, ex.label, &d2);

    // Second layer: z2 = W0 h + b0 + s B (A h).
    const Vector bt_d2 = l2.B.transpose() * d2;
    gB2.noalias() += s2 * d2 * c.second.projected.transpose();
    gA2.noalias() += s2 * bt_d2 * c.hidden.transpose();
    const Vector dh = l2.base_weight.transpose() * d2 + s2 * (l2.A.transpose() * bt_d2);

    // First layer through the activation.
    const Vector d1 = dh.cwiseProduct(activation_slope(model.shape().activation, c.first.pre, c.hidden));
    gB1.noalias() += s1 * d1 * c.first.projected.transpose();
    gA1.noalias() += s1 * (l1.B.transpose() * d1) * ex.x.transpose();
  }

  const double inv_n = 1.0 / static_cast<double>(batch.size());
  LossAndGradient out;
  out.loss = total * inv_n;
  out.gradient.resize(static_cast<Eigen::Index>(model.adapter_dim()));
  for (const auto& e : model.layout().entries) {
    const Matrix& g = e.layer == 0 ? (e.which == AdapterFactor::B ? gB1 : gA1) : (e.which == AdapterFactor::B ? gB2 : gA2);
    write_row_major(out.gradient, e.offset, g);
  }
  out.gradient *= inv_n;
  return out;
}

Vector backward(const TinyMlp& model, std::span<const Example> batch) {
  return loss_and_gradient(model, batch).gradient;
}

Vector full_weight_gradient(const TinyMlp& model, std::span<const Example> batch) {
  check_batch(model, batch);
  const auto grads = effective_gradients(model, batch, nullptr);
  Vector out(static_cast<Eigen::Index>(model.full_weight_dim()));
  std::size_t offset = 0;
  for (const auto& g : grads) {
    write_row_major(out, offset, g.weight);
    offset += static_cast<std::size_t>(g.weight.size());
  }
  return out / static_cast<double>(batch.size());
}

Vector jacobian_transpose_apply(const TinyMlp& model, const Vector& full_gradient) {
  if (static_cast<std::size_t>(full_gradient.size()) != model.full_weight_dim()) {
    throw DimensionError("full-space gradient has length " + std::to_string(full_gradient.size()) +
                         ", model has " + std::to_string(model.full_weight_dim()) + " effective weights");
  }
  const auto layers = model.layers();
  Vector out(static_cast<Eigen::Index>(model.adapter_dim()));
  std::size_t block_offset = 0;
  std::vector<Matrix> blocks;
  for (const auto& layer : layers) {
    blocks.push_back(read_row_major(full_gradient, block_offset, layer.base_weight.rows(), layer.base_weight.cols()));
    block_offset += static_cast<std::size_t>(layer.base_weight.size());
  }
  for (const auto& e : model.layout().entries) {
    const LoraLayer& layer = layers[e.layer];
    const Matrix& block = blocks[e.layer];
    if (e.which == AdapterFactor::B) {
      write_row_major(out, e.offset, layer.scale() * block * layer.A.transpose());
    } else {
      write_row_major(out, e.offset, layer.scale() * layer.B.transpose() * block);
    }
  }
  return out;
}

Vector jacobian_apply(const TinyMlp& model, const Vector& delta_phi) {
  if (static_cast<std::size_t>(delta_phi.size()) != model.adapter_dim()) {
    throw DimensionError("adapter step has length " + std::to_string(delta_phi.size()) + ", layout expects " +
                         std::to_string(model.adapter_dim()));
  }
  const auto layers = model.layers();
  Vector out(static_cast<Eigen::Index>(model.full_weight_dim()));
  std::size_t offset = 0;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const LoraLayer& layer = layers[l];
    Matrix dB, dA;
    for (const auto& e : model.layout().entries) {
      if (e.layer != l) continue;
      if (e.which == AdapterFactor::B) {
        dB = read_row_major(delta_phi, e.offset, layer.B.rows(), layer.B.cols());
      } else {
        dA = read_row_major(delta_phi, e.offset, layer.A.rows(), layer.A.cols());
      }
    }
    const Matrix dW = layer.scale() * (dB * layer.A + layer.B * dA);
    write_row_major(out, offset, dW);
    offset += static_cast<std::size_t>(dW.size());
  }
  return out;
}

int predict(const TinyMlp& model, const Vector& x) {
  Eigen::Index best = 0;
  model.forward(x).maxCoeff(&best);
  return static_cast<int>(best);
}

double accuracy(const TinyMlp& model, std::span<const Example> data) {
  if (data.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& ex : data) {
    if (predict(model, ex.x) == ex.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

void pretrain_base(TinyMlp& model, std::span<const Example> data, const PretrainConfig& config) {
  if (model.frozen()) throw ContractError("pretrain_base: base weights are frozen");
  if (data.empty() || config.steps == 0) {
    model.freeze();
    return;
  }
  if (config.batch_size == 0) throw ConfigError("pretrain.batch_size", "must be positive");
  if (!(config.lr > 0.0)) throw ConfigError("pretrain.lr", "must be positive");
  check_batch(model, data);

  Rng rng(mix_seed(config.seed, 0x707265ULL));
  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();
  Dataset batch;
  for (std::size_t step = 0; step < config.steps; ++step) {
    batch.clear();
    while (batch.size() < std::min(config.batch_size, data.size())) {
      if (cursor == order.size()) {
        rng.shuffle(std::span<std::size_t>(order));
        cursor = 0;
      }
      batch.push_back(data[order[cursor++]]);
    }
    const auto grads = effective_gradients(model, batch, nullptr);
    const double step_size = config.lr / static_cast<double>(batch.size());
    // dL/dW0 equals dL/dW_eff.
    for (std::size_t l = 0; l < grads.size(); ++l) {
      model.layers_[l].base_weight -= step_size * grads[l].weight;
      model.layers_[l].base_bias -= step_size * grads[l].bias;
    }
  }
  model.freeze();
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr const char* kCheckpointMagic = "gemlora-checkpoint";
constexpr int kCheckpointVersion = 1;

std::string hex(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

double parse_hex(const std::string& token) {
  char* end = nullptr;
  const double v = std::strtod(token.c_str(), &end);
  if (end == token.c_str() || *end != '\0') throw DataError("checkpoint: bad number '" + token + "'");
  return v;
}

void write_matrix(std::ostream& out, const char* name, const Matrix& m) {
  out << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? " " : "") << hex(m(i, j));
    out << '\n';
  }
}

std::string expect_token(std::istream& in, const char* what) {
  std::string tok;
  if (!(in >> tok)) throw DataError(std::string("checkpoint: unexpected end of input, expected ") + what);
  return tok;
}

void expect_keyword(std::istream& in, const std::string& keyword) {
  const std::string tok = expect_token(in, keyword.c_str());
  if (tok != keyword) throw DataError("checkpoint: expected '" + keyword + "', found '" + tok + "'");
}

std::size_t read_count(std::istream& in, const char* what) {
  const std::string tok = expect_token(in, what);
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(tok, &pos);
    if (pos != tok.size()) throw DataError("");
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw DataError(std::string("checkpoint: bad ") + what + " '" + tok + "'");
  }
}

Matrix read_matrix(std::istream& in, const char* name, Eigen::Index rows, Eigen::Index cols) {
  expect_keyword(in, name);
  const auto r = static_cast<Eigen::Index>(read_count(in, "rows"));
  const auto c = static_cast<Eigen::Index>(read_count(in, "cols"));
  if (r != rows || c != cols) {
    throw DataError(std::string("checkpoint: ") + name + " has shape " + std::to_string(r) + "x" + std::to_string(c) +
                    ", expected " + std::to_string(rows) + "x" + std::to_string(cols));
  }
  Matrix m(rows, cols);
  for (auto& v : m.reshaped<Eigen::RowMajor>()) v = parse_hex(expect_token(in, name));
  return m;
}

}  // namespace

void save_checkpoint(const TinyMlp& model, std::ostream& out) {
  const auto& s = model.shape();
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  out << "shape " << s.input << ' ' << s.hidden << ' ' << s.classes << ' ' << s.rank << ' ' << hex(s.alpha) << ' '
      << to_string(s.activation) << '\n';
  out << "frozen " << (model.frozen() ? 1 : 0) << '\n';
  const auto layers = model.layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    out << "layer " << l << '\n';
    write_matrix(out, "W0", layers[l].base_weight);
    write_matrix(out, "b0", Matrix(layers[l].base_bias.transpose()));
    write_matrix(out, "B", layers[l].B);
    write_matrix(out, "A", layers[l].A);
  }
  out << "end\n";
}

TinyMlp load_checkpoint(std::istream& in) {
  expect_keyword(in, kCheckpointMagic);
  const std::size_t version = read_count(in, "version");
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint: unsupported version " + std::to_string(version));
  }
  TinyMlp model;
  expect_keyword(in, "shape");
  ModelShape shape;
  shape.input = read_count(in, "input");
  shape.hidden = read_count(in, "hidden");
  shape.classes = read_count(in, "classes");
  shape.rank = read_count(in, "rank");
  shape.alpha = parse_hex(expect_token(in, "alpha"));
  shape.activation = activation_from_string(expect_token(in, "activation"));
  expect_keyword(in, "frozen");
  const std::size_t frozen = read_count(in, "frozen flag");

  // Validates the shape and gives the layer skeleton.
  TinyMlp skeleton(shape, 0);
  model.shape_ = shape;
  model.layers_ = skeleton.layers_;
  for (std::size_t l = 0; l < model.layers_.size(); ++l) {
    expect_keyword(in, "layer");
    if (read_count(in, "layer index") != l) throw DataError("checkpoint: layers out of order");
    auto& layer = model.layers_[l];
    layer.base_weight = read_matrix(in, "W0", layer.base_weight.rows(), layer.base_weight.cols());
    layer.base_bias = read_matrix(in, "b0", 1, layer.base_bias.size()).transpose();
    layer.B = read_matrix(in, "B", layer.B.rows(), layer.B.cols());
    layer.A = read_matrix(in, "A", layer.A.rows(), layer.A.cols());
  }
  expect_keyword(in, "end");
  model.frozen_ = frozen != 0;
  model.build_layout();
  return model;
}

}  // namespace gemlora
