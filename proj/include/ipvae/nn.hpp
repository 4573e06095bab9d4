#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ipvae/graph.hpp"
#include "ipvae/tensor.hpp"

namespace ipvae {

using Rng = std::mt19937_64;

/// Tensor of i.i.d. standard normal draws.
Tensor standard_normal(Tensor::Shape shape, Rng& rng);

}  // namespace ipvae

namespace ipvae::nn {

double glorot_bound(std::size_t fan_in, std::size_t fan_out);

/// [fan_in, fan_out] matrix with entries uniform in +-sqrt(6 / (fan_in + fan_out)).
Tensor glorot_init(std::size_t fan_in, std::size_t fan_out, Rng& rng);

enum class Activation { Identity, Tanh, Sigmoid };

/// y = act(x W + b); parameters live in a ParamMap as "<prefix>.W" and "<prefix>.b".
struct DenseLayer {
  std::string prefix;
  std::size_t in = 0;
  std::size_t out = 0;
  Activation activation = Activation::Identity;
};

/// Gated linear unit: h = (x W_h + b_h) * sigmoid(x W_g + b_g).
struct GatedDenseLayer {
  std::string prefix;
  std::size_t in = 0;
  std::size_t out = 0;
};

/// Glorot weights and zero biases.
void init_layer(ParamMap& params, const DenseLayer& layer, Rng& rng);
void init_layer(ParamMap& params, const GatedDenseLayer& layer, Rng& rng);

/// Resolves parameter names to graph leaves. A frozen scope wraps every leaf
/// in stop_gradient, so no gradient reaches those parameters.
class ParamScope {
 public:
  ParamScope(diff::Graph& graph, const ParamMap& params, bool frozen = false)
      : graph_(&graph), params_(&params), frozen_(frozen) {}

  diff::Node operator()(const std::string& name) const;
  diff::Graph& graph() const { return *graph_; }
  const ParamMap& params() const { return *params_; }
  bool frozen() const { return frozen_; }
  ParamScope with_frozen(bool frozen) const { return ParamScope(*graph_, *params_, frozen); }

 private:
  diff::Graph* graph_;
  const ParamMap* params_;
  bool frozen_;
};

diff::Node dense_forward(const ParamScope& scope, const DenseLayer& layer, diff::Node x);
diff::Node gated_forward(const ParamScope& scope, const GatedDenseLayer& layer, diff::Node x);

enum class Mode { Train, Eval };

struct DropoutSpec {
  double keep = 1.0;
  Mode mode = Mode::Eval;

  /// Throws std::invalid_argument unless keep is in (0, 1].
  void validate() const;
};

/// Inverted-dropout mask: entries are 0 or 1/keep in train mode, all ones in
/// eval mode.
Tensor dropout_mask(const Tensor::Shape& shape, const DropoutSpec& spec, Rng& rng);
Tensor dropout_apply(const Tensor& x, const DropoutSpec& spec, Rng& rng);
diff::Node dropout(diff::Graph& g, diff::Node x, const DropoutSpec& spec, Rng& rng);

/// Applies `layers` in order. When `spec` is given, dropout follows every layer
/// except the last.
diff::Node mlp_forward(const ParamScope& scope, std::span<const DenseLayer> layers, diff::Node x,
                       const DropoutSpec* spec = nullptr, Rng* rng = nullptr);

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction over a fixed set of named parameters.
/// step() descends: parameters move against the gradient.
class Adam {
 public:
  Adam(AdamConfig config, std::vector<std::string> names);

  void step(ParamMap& params, const ParamMap& grads);

  std::uint64_t steps() const { return steps_; }
  const AdamConfig& config() const { return config_; }
  const std::vector<std::string>& names() const { return names_; }
  const ParamMap& first_moment() const { return m_; }
  const ParamMap& second_moment() const { return v_; }

 private:
  AdamConfig config_;
  std::vector<std::string> names_;
  ParamMap m_;
  ParamMap v_;
  std::uint64_t steps_ = 0;
};

}  // namespace ipvae::nn
