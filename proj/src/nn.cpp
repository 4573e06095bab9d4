#include "ipvae/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace ipvae {

Tensor standard_normal(Tensor::Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : t.data()) v = normal(rng);
  return t;
}

}  // namespace ipvae

namespace ipvae::nn {

using diff::Graph;
using diff::Node;

double glorot_bound(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

Tensor glorot_init(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  if (fan_in == 0 || fan_out == 0) throw std::invalid_argument("glorot_init: fan_in and fan_out must be >= 1");
  const double bound = glorot_bound(fan_in, fan_out);
  std::uniform_real_distribution<double> uniform(-bound, bound);
  Tensor w({fan_in, fan_out});
  for (double& v : w.data()) v = uniform(rng);
  return w;
}

void init_layer(ParamMap& params, const DenseLayer& layer, Rng& rng) {
  params[layer.prefix + ".W"] = glorot_init(layer.in, layer.out, rng);
  params[layer.prefix + ".b"] = Tensor({layer.out});
}

void init_layer(ParamMap& params, const GatedDenseLayer& layer, Rng& rng) {
  params[layer.prefix + ".W_h"] = glorot_init(layer.in, layer.out, rng);
  params[layer.prefix + ".b_h"] = Tensor({layer.out});
  params[layer.prefix + ".W_g"] = glorot_init(layer.in, layer.out, rng);
  params[layer.prefix + ".b_g"] = Tensor({layer.out});
}

Node ParamScope::operator()(const std::string& name) const {
  auto it = params_->find(name);
  if (it == params_->end()) throw std::out_of_range("missing parameter '" + name + "'");
  const Node leaf = graph_->parameter(name, it->second);
  return frozen_ ? graph_->stop_gradient(leaf) : leaf;
}

Node dense_forward(const ParamScope& scope, const DenseLayer& layer, Node x) {
  auto& g = scope.graph();
  const Node pre = g.add(g.matmul(x, scope(layer.prefix + ".W")), scope(layer.prefix + ".b"));
  switch (layer.activation) {
    case Activation::Identity: return pre;
    case Activation::Tanh: return g.tanh(pre);
    case Activation::Sigmoid: return g.sigmoid(pre);
  }
  return pre;
}

Node gated_forward(const ParamScope& scope, const GatedDenseLayer& layer, Node x) {
  auto& g = scope.graph();
  const Node value = g.add(g.matmul(x, scope(layer.prefix + ".W_h")), scope(layer.prefix + ".b_h"));
  const Node gate = g.add(g.matmul(x, scope(layer.prefix + ".W_g")), scope(layer.prefix + ".b_g"));
  return g.mul(value, g.sigmoid(gate));
}

void DropoutSpec::validate() const {
  if (!(keep > 0.0 && keep <= 1.0)) {
    throw std::invalid_argument("dropout keep probability must be in (0, 1], got " + std::to_string(keep));
  }
}

Tensor dropout_mask(const Tensor::Shape& shape, const DropoutSpec& spec, Rng& rng) {
  spec.validate();
  Tensor mask(shape, 1.0);
  if (spec.mode == Mode::Eval || spec.keep == 1.0) return mask;
  // One 53-bit uniform per unit, compared against the keep probability.
  const double scale = 1.0 / spec.keep;
  constexpr double kUnit = 0x1.0p-53;
  for (double& v : mask.data()) v = static_cast<double>(rng() >> 11) * kUnit < spec.keep ? scale : 0.0;
  return mask;
}

Tensor dropout_apply(const Tensor& x, const DropoutSpec& spec, Rng& rng) {
  const Tensor mask = dropout_mask(x.shape(), spec, rng);
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return out;
}

Node dropout(Graph& g, Node x, const DropoutSpec& spec, Rng& rng) {
  spec.validate();
  if (spec.mode == Mode::Eval || spec.keep == 1.0) return x;
  return g.mul(x, g.constant(dropout_mask(g.shape(x), spec, rng)));
}

Node mlp_forward(const ParamScope& scope, std::span<const DenseLayer> layers, Node x,
                 const DropoutSpec* spec, Rng* rng) {
  if (spec && !rng) throw std::invalid_argument("mlp_forward: dropout requires an rng");
  Node h = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = dense_forward(scope, layers[i], h);
    if (spec && i + 1 < layers.size()) h = dropout(scope.graph(), h, *spec, *rng);
  }
  return h;
}

Adam::Adam(AdamConfig config, std::vector<std::string> names)
    : config_(config), names_(std::move(names)) {}

void Adam::step(ParamMap& params, const ParamMap& grads) {
  // Validate everything first so a bad gradient leaves parameters untouched.
  for (const auto& name : names_) {
    auto p = params.find(name);
    auto g = grads.find(name);
    if (p == params.end()) throw std::out_of_range("Adam: missing parameter '" + name + "'");
    if (g == grads.end()) throw std::out_of_range("Adam: missing gradient for '" + name + "'");
    if (!g->second.same_shape(p->second)) {
      throw std::invalid_argument("Adam: gradient shape " + shape_string(g->second.shape()) +
                                  " does not match parameter '" + name + "' " +
                                  shape_string(p->second.shape()));
    }
    for (double v : g->second.data()) {
      if (std::isnan(v)) throw std::runtime_error("Adam: NaN gradient for parameter '" + name + "'");
    }
  }

  ++steps_;
  const double t = static_cast<double>(steps_);
  const double bc1 = 1.0 - std::pow(config_.beta1, t);
  const double bc2 = 1.0 - std::pow(config_.beta2, t);
  for (const auto& name : names_) {
    Tensor& p = params.at(name);
    const Tensor& g = grads.at(name);
    auto m = m_.try_emplace(name, p.shape()).first->second.data();
    auto v = v_.try_emplace(name, p.shape()).first->second.data();
    double* pd = p.data().data();
    const double* gd = g.data().data();
    double* md = m.data();
    double* vd = v.data();
    const double b1 = config_.beta1, b2 = config_.beta2, eps = config_.eps;
    const double step = config_.lr / bc1, inv_bc2 = 1.0 / bc2;
    const std::size_t n = p.size();
    for (std::size_t i = 0; i < n; ++i) {
      md[i] = b1 * md[i] + (1.0 - b1) * gd[i];
      vd[i] = b2 * vd[i] + (1.0 - b2) * gd[i] * gd[i];
      pd[i] -= step * md[i] / (std::sqrt(vd[i] * inv_bc2) + eps);
    }
  }
}

}  // namespace ipvae::nn
