#include "ipvae/model.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <stdexcept>

namespace ipvae {

using diff::Graph;
using diff::Node;
using nn::DenseLayer;
using nn::GatedDenseLayer;
using nn::ParamScope;

namespace {

struct Layers {
  GatedDenseLayer enc1, enc2;
  DenseLayer enc_mu, enc_logvar;
  GatedDenseLayer dec1, dec2;
  DenseLayer dec_mean, dec_logvar;
  std::vector<DenseLayer> ratio;
};

Layers layers_for(const Architecture& a) {
  Layers l;
  l.enc1 = {"enc.l1", a.data_dim, a.hidden};
  l.enc2 = {"enc.l2", a.hidden, a.hidden};
  l.enc_mu = {"enc.mu", a.hidden, a.latent_dim, nn::Activation::Identity};
  l.enc_logvar = {"enc.logvar", a.hidden, a.latent_dim, nn::Activation::Identity};
  l.dec1 = {"dec.l1", a.latent_dim, a.hidden};
  l.dec2 = {"dec.l2", a.hidden, a.hidden};
  l.dec_mean = {"dec.mean", a.hidden, a.data_dim, nn::Activation::Sigmoid};
  l.dec_logvar = {"dec.logvar", a.hidden, a.data_dim, nn::Activation::Identity};
  l.ratio = {{"ratio.l1", a.latent_dim, a.ratio_hidden, nn::Activation::Tanh},
             {"ratio.l2", a.ratio_hidden, a.ratio_hidden, nn::Activation::Tanh},
             {"ratio.out", a.ratio_hidden, 1, nn::Activation::Identity}};
  return l;
}

constexpr const char* kPseudoName = "pseudo.u";

}  // namespace

std::string to_string(Likelihood l) { return l == Likelihood::Bernoulli ? "bernoulli" : "gaussian"; }

std::string to_string(PriorKind p) {
  switch (p) {
    case PriorKind::StandardGaussian: return "standard";
    case PriorKind::VampPrior: return "vamp";
    case PriorKind::ImplicitOptimal: return "implicit";
  }
  return "standard";
}

Likelihood parse_likelihood(std::string_view s) {
  if (s == "bernoulli") return Likelihood::Bernoulli;
  if (s == "gaussian") return Likelihood::Gaussian;
  throw std::invalid_argument("unknown likelihood '" + std::string(s) + "'");
}

PriorKind parse_prior(std::string_view s) {
  if (s == "standard" || s == "StandardGaussian") return PriorKind::StandardGaussian;
  if (s == "vamp" || s == "VampPrior") return PriorKind::VampPrior;
  if (s == "implicit" || s == "ImplicitOptimal") return PriorKind::ImplicitOptimal;
  throw std::invalid_argument("unknown prior '" + std::string(s) + "' (expected standard, vamp or implicit)");
}

void Architecture::validate() const {
  if (data_dim == 0 || latent_dim == 0 || hidden == 0 || ratio_hidden == 0) {
    throw std::invalid_argument("architecture dimensions must be >= 1");
  }
  if (prior.kind == PriorKind::VampPrior && prior.k_mix == 0) {
    throw std::invalid_argument("VampPrior needs k_mix >= 1");
  }
  if (!(ratio_keep > 0.0 && ratio_keep <= 1.0)) {
    throw std::invalid_argument("ratio dropout keep probability must be in (0, 1]");
  }
}

std::string Architecture::to_json() const {
  nlohmann::json j = {{"data_dim", data_dim},
                      {"latent_dim", latent_dim},
                      {"hidden", hidden},
                      {"ratio_hidden", ratio_hidden},
                      {"likelihood", to_string(likelihood)},
                      {"prior", to_string(prior.kind)},
                      {"k_mix", prior.k_mix},
                      {"clip_pseudo_inputs", clip_pseudo_inputs},
                      {"ratio_keep", ratio_keep}};
  return j.dump();
}

Architecture Architecture::from_json(std::string_view text) {
  const auto j = nlohmann::json::parse(text);
  Architecture a;
  a.data_dim = j.at("data_dim").get<std::size_t>();
  a.latent_dim = j.at("latent_dim").get<std::size_t>();
  a.hidden = j.at("hidden").get<std::size_t>();
  a.ratio_hidden = j.at("ratio_hidden").get<std::size_t>();
  a.likelihood = parse_likelihood(j.at("likelihood").get<std::string>());
  a.prior.kind = parse_prior(j.at("prior").get<std::string>());
  a.prior.k_mix = j.at("k_mix").get<std::size_t>();
  a.clip_pseudo_inputs = j.at("clip_pseudo_inputs").get<bool>();
  a.ratio_keep = j.at("ratio_keep").get<double>();
  a.validate();
  return a;
}

std::vector<std::string> ModelBundle::names_with_prefix(std::string_view prefix) const {
  std::vector<std::string> out;
  for (const auto& [name, _] : params) {
    if (name.starts_with(prefix)) out.push_back(name);
  }
  return out;
}

ModelBundle make_bundle(const Architecture& arch, Rng& rng, const Tensor* train) {
  arch.validate();
  ModelBundle b{arch, {}};
  const auto l = layers_for(arch);
  nn::init_layer(b.params, l.enc1, rng);
  nn::init_layer(b.params, l.enc2, rng);
  nn::init_layer(b.params, l.enc_mu, rng);
  nn::init_layer(b.params, l.enc_logvar, rng);
  nn::init_layer(b.params, l.dec1, rng);
  nn::init_layer(b.params, l.dec2, rng);
  nn::init_layer(b.params, l.dec_mean, rng);
  if (arch.likelihood == Likelihood::Gaussian) nn::init_layer(b.params, l.dec_logvar, rng);
  if (arch.prior.kind == PriorKind::ImplicitOptimal) {
    for (const auto& layer : l.ratio) nn::init_layer(b.params, layer, rng);
  }
  if (arch.prior.kind == PriorKind::VampPrior) {
    const std::size_t k = arch.prior.k_mix;
    Tensor u({k, arch.data_dim});
    std::normal_distribution<double> noise(0.0, 0.1);
    if (train && train->rows() > 0) {
      if (train->cols() != arch.data_dim) throw std::invalid_argument("pseudo-input data has wrong dimension");
      std::uniform_int_distribution<std::size_t> pick(0, train->rows() - 1);
      for (std::size_t r = 0; r < k; ++r) {
        const auto src = train->row(pick(rng));
        auto dst = u.row(r);
        for (std::size_t c = 0; c < dst.size(); ++c) dst[c] = src[c] + noise(rng);
      }
    } else {
      std::uniform_real_distribution<double> uniform(0.0, 1.0);
      for (double& v : u.data()) v = uniform(rng);
    }
    if (arch.clip_pseudo_inputs) {
      for (double& v : u.data()) v = std::clamp(v, 0.0, 1.0);
    }
    b.params[kPseudoName] = std::move(u);
  }
  return b;
}

Checkpoint to_checkpoint(const ModelBundle& bundle, std::string_view info_json) {
  nlohmann::json meta = {{"architecture", nlohmann::json::parse(bundle.arch.to_json())},
                         {"info", nlohmann::json::parse(info_json)}};
  return {bundle.params, meta.dump(), Checkpoint::kVersion};
}

ModelBundle bundle_from_checkpoint(const Checkpoint& ckpt) {
  Architecture arch;
  try {
    arch = Architecture::from_json(nlohmann::json::parse(ckpt.metadata).at("architecture").dump());
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint metadata has no valid architecture: ") + e.what());
  }
  Rng rng(0);
  const auto reference = make_bundle(arch, rng);
  for (const auto& [name, t] : reference.params) {
    auto it = ckpt.params.find(name);
    if (it == ckpt.params.end()) throw CheckpointError("checkpoint lacks parameter '" + name + "'");
    if (!it->second.same_shape(t)) {
      throw CheckpointError("parameter '" + name + "' has shape " + shape_string(it->second.shape()) +
                            ", architecture expects " + shape_string(t.shape()));
    }
  }
  for (const auto& [name, _] : ckpt.params) {
    if (!reference.params.contains(name)) throw CheckpointError("unexpected parameter '" + name + "' in checkpoint");
  }
  return {arch, ckpt.params};
}

dist::DiagGaussianParams GaussianBatch::row(std::size_t i) const {
  const auto m = mu.row(i);
  const auto lv = log_var.row(i);
  return {std::vector<double>(m.begin(), m.end()), std::vector<double>(lv.begin(), lv.end())};
}

namespace model {

EncoderNodes encode(const ParamScope& scope, const Architecture& arch, Node x) {
  auto& g = scope.graph();
  const auto& s = g.shape(x);
  if (s.size() != 2 || s[1] != arch.data_dim) {
    throw std::invalid_argument("encode: expected [B, " + std::to_string(arch.data_dim) + "] input, got " +
                                shape_string(s));
  }
  const auto l = layers_for(arch);
  const Node h = nn::gated_forward(scope, l.enc2, nn::gated_forward(scope, l.enc1, x));
  const Node mu = nn::dense_forward(scope, l.enc_mu, h);
  const Node log_var = g.clamp(nn::dense_forward(scope, l.enc_logvar, h), dist::kEncoderLogVarMin,
                               dist::kEncoderLogVarMax);
  return {mu, log_var};
}

DecoderNodes decode(const ParamScope& scope, const Architecture& arch, Node z) {
  auto& g = scope.graph();
  const auto& s = g.shape(z);
  if (s.size() != 2 || s[1] != arch.latent_dim) {
    throw std::invalid_argument("decode: expected [B, " + std::to_string(arch.latent_dim) + "] latents, got " +
                                shape_string(s));
  }
  const auto l = layers_for(arch);
  const Node h = nn::gated_forward(scope, l.dec2, nn::gated_forward(scope, l.dec1, z));
  DecoderNodes out{nn::dense_forward(scope, l.dec_mean, h), {}};
  if (arch.likelihood == Likelihood::Gaussian) {
    out.log_var = g.clamp(nn::dense_forward(scope, l.dec_logvar, h), dist::kDecoderLogVarMin,
                          dist::kDecoderLogVarMax);
  }
  return out;
}

Node log_likelihood(Graph& g, const Architecture& arch, const DecoderNodes& dec, Node x) {
  if (arch.likelihood == Likelihood::Bernoulli) return dist::bernoulli_log_pmf(g, dec.mean, x);
  return dist::gaussian_likelihood_log_pdf(g, dec.mean, dec.log_var, x);
}

Node ratio_logit(const ParamScope& scope, const Architecture& arch, Node z, nn::Mode mode, Rng* rng) {
  auto& g = scope.graph();
  const auto l = layers_for(arch);
  const nn::DropoutSpec spec{arch.ratio_keep, mode};
  const bool use_dropout = mode == nn::Mode::Train && arch.ratio_keep < 1.0;
  if (use_dropout && !rng) throw std::invalid_argument("ratio_logit: train mode needs an rng");
  const Node out = nn::mlp_forward(scope, l.ratio, z, use_dropout ? &spec : nullptr, rng);
  return g.reshape(out, {g.shape(out)[0]});
}

Node pseudo_inputs(const ParamScope& scope, const Architecture& arch) {
  const Node u = scope(kPseudoName);
  return arch.clip_pseudo_inputs ? scope.graph().clamp(u, 0.0, 1.0) : u;
}

Node mixture_log_density(Graph& g, Node comp_mu, Node comp_log_var, Node z) {
  const auto k = g.shape(comp_mu)[0];
  const double d = static_cast<double>(g.shape(z)[1]);
  // sum_d (z - mu)^2 / v = z^2 . (1/v) - 2 z . (mu/v) + sum_d mu^2 / v, for every (row, component)
  const Node inv_var = g.exp(g.scale(comp_log_var, -1.0));
  const Node zz = g.matmul(g.square(z), g.transpose(inv_var));
  const Node zm = g.matmul(z, g.transpose(g.mul(comp_mu, inv_var)));
  const Node per_comp = g.sum_cols(g.add(g.mul(g.square(comp_mu), inv_var), comp_log_var));
  const Node quad = g.add(g.sub(zz, g.scale(zm, 2.0)), per_comp);
  const Node log_pdf = g.shift(g.scale(quad, -0.5), -d * dist::kHalfLog2Pi);
  return g.shift(g.logsumexp_cols(log_pdf), -std::log(static_cast<double>(k)));
}

Node vamp_log_prior(const ParamScope& scope, const Architecture& arch, Node z) {
  const auto comps = encode(scope, arch, pseudo_inputs(scope, arch));
  return mixture_log_density(scope.graph(), comps.mu, comps.log_var, z);
}

GaussianBatch encode(const ModelBundle& bundle, const Tensor& x) {
  Graph g;
  const auto e = encode(ParamScope(g, bundle.params), bundle.arch, g.input("x", x));
  return {g.value(e.mu), g.value(e.log_var)};
}

Tensor decode_mean(const ModelBundle& bundle, const Tensor& z) {
  Graph g;
  return g.value(decode(ParamScope(g, bundle.params), bundle.arch, g.input("z", z)).mean);
}

Tensor ratio_logit(const ModelBundle& bundle, const Tensor& z, nn::Mode mode, Rng* rng) {
  Graph g;
  return g.value(ratio_logit(ParamScope(g, bundle.params), bundle.arch, g.input("z", z), mode, rng));
}

Tensor vamp_log_prior(const ModelBundle& bundle, const Tensor& z) {
  Graph g;
  return g.value(vamp_log_prior(ParamScope(g, bundle.params), bundle.arch, g.input("z", z)));
}

}  // namespace model
}  // namespace ipvae
