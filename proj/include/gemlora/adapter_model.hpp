// Copyright 2026 The gemlora Authors
// SPDX-License-Identifier: Apache-2.0
//
// Two-layer classifier with frozen base weights and trainable low-rank
// adapters. Each layer computes
//
//   z = W0 x + b0 + (alpha / r) B (A x)
//
// and only the B, A factors are trainable. The adapter parameter vector phi
// concatenates, per layer, B then A in row-major order.

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "gemlora/linalg.hpp"

namespace gemlora {

struct Example {
  Vector x;
  int label = 0;
};

using Dataset = std::vector<Example>;

enum class Activation { tanh, softplus };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

struct ModelShape {
  std::size_t input = 32;
  std::size_t hidden = 16;
  std::size_t classes = 4;
  std::size_t rank = 4;
  double alpha = 32.0;
  Activation activation = Activation::tanh;

  bool operator==(const ModelShape&) const = default;
};

struct LoraLayer {
  Matrix base_weight;  // W0, out x in, frozen after TinyMlp::freeze()
  Vector base_bias;    // b0, frozen with W0
  Matrix B;            // out x r
  Matrix A;            // r x in
  double alpha = 1.0;
  std::size_t rank = 1;

  double scale() const noexcept { return alpha / static_cast<double>(rank); }
  std::size_t out_dim() const noexcept { return static_cast<std::size_t>(base_weight.rows()); }
  std::size_t in_dim() const noexcept { return static_cast<std::size_t>(base_weight.cols()); }
  // W0 + (alpha / r) B A
  Matrix effective_weight() const { return base_weight + scale() * (B * A); }
};

enum class AdapterFactor { B, A };

struct LayoutEntry {
  std::size_t layer = 0;
  AdapterFactor which = AdapterFactor::B;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t offset = 0;

  std::size_t size() const noexcept { return rows * cols; }
};

struct AdapterLayout {
  std::vector<LayoutEntry> entries;
  std::size_t total = 0;
};

struct PretrainConfig;

class TinyMlp {
 public:
  // Random base weights, B = 0, A ~ U(-a, a) with a = 1 / sqrt(in).
  TinyMlp(const ModelShape& shape, std::uint64_t seed);

  const ModelShape& shape() const noexcept { return shape_; }
  const AdapterLayout& layout() const noexcept { return layout_; }
  std::size_t adapter_dim() const noexcept { return layout_.total; }
  // Number of effective-weight entries (the full-space gradient length).
  std::size_t full_weight_dim() const noexcept;

  std::span<const LoraLayer> layers() const noexcept { return layers_; }
  // Mutable access for adapter manipulation. Base weights of a frozen model
  // must not be changed through this.
  LoraLayer& layer(std::size_t i) { return layers_.at(i); }

  Vector adapter_params() const;
  void set_adapter_params(const Vector& phi);

  // Changes alpha on every layer (adapter scaling).
  void set_alpha(double alpha);

  bool frozen() const noexcept { return frozen_; }
  void freeze() noexcept { frozen_ = true; }

  Vector forward(const Vector& x) const;

 private:
  friend void pretrain_base(TinyMlp&, std::span<const Example>, const PretrainConfig&);
  friend TinyMlp load_checkpoint(std::istream&);

  TinyMlp() = default;
  void build_layout();

  ModelShape shape_;
  std::vector<LoraLayer> layers_;
  AdapterLayout layout_;
  bool frozen_ = false;
};

struct LossAndGradient {
  double loss = 0.0;
  Vector gradient;
};

// Mean softmax cross-entropy over the batch.
double loss(const TinyMlp& model, std::span<const Example> batch);

// Mean loss and its gradient with respect to phi. Computed through the
// factored forward pass; base weights receive no gradient.
LossAndGradient loss_and_gradient(const TinyMlp& model, std::span<const Example> batch);
Vector backward(const TinyMlp& model, std::span<const Example> batch);

// Mean gradient with respect to every effective-weight entry, layer by layer,
// row-major.
Vector full_weight_gradient(const TinyMlp& model, std::span<const Example> batch);

// g_phi = J(phi)^T g for a full-space gradient g laid out like full_weight_gradient.
Vector jacobian_transpose_apply(const TinyMlp& model, const Vector& full_gradient);

// delta_theta = J(phi) delta_phi.
Vector jacobian_apply(const TinyMlp& model, const Vector& delta_phi);

int predict(const TinyMlp& model, const Vector& x);
double accuracy(const TinyMlp& model, std::span<const Example> data);

struct PretrainConfig {
  std::size_t steps = 300;
  double lr = 0.1;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

// Trains W0 and b0 with plain SGD (adapters untouched), then freezes them.
// Throws ContractError on an already frozen model.
void pretrain_base(TinyMlp& model, std::span<const Example> data, const PretrainConfig& config);

// Text checkpoint; doubles are written as hex floats so the round trip is exact
// and independent of byte order. See docs/formats.md.
void save_checkpoint(const TinyMlp& model, std::ostream& out);
TinyMlp load_checkpoint(std::istream& in);

}  // namespace gemlora
