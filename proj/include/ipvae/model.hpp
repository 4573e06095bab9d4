#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "ipvae/checkpoint.hpp"
#include "ipvae/dist.hpp"
#include "ipvae/graph.hpp"
#include "ipvae/nn.hpp"

namespace ipvae {

enum class Likelihood { Bernoulli, Gaussian };
enum class PriorKind { StandardGaussian, VampPrior, ImplicitOptimal };

std::string to_string(Likelihood l);
std::string to_string(PriorKind p);
Likelihood parse_likelihood(std::string_view s);
/// Accepts "standard", "vamp", "implicit" (and the enum spellings).
PriorKind parse_prior(std::string_view s);

struct PriorMode {
  PriorKind kind = PriorKind::StandardGaussian;
  std::size_t k_mix = 0;  // number of pseudo-inputs, VampPrior only
};

struct Architecture {
  std::size_t data_dim = 0;
  std::size_t latent_dim = 2;
  std::size_t hidden = 500;
  std::size_t ratio_hidden = 500;
  Likelihood likelihood = Likelihood::Bernoulli;
  PriorMode prior;
  bool clip_pseudo_inputs = false;  // min(max(u, 0), 1) before encoding
  double ratio_keep = 0.5;          // dropout keep probability in the ratio net

  /// Throws std::invalid_argument on inconsistent settings.
  void validate() const;
  std::string to_json() const;
  static Architecture from_json(std::string_view text);
};

/// Parameters of every network plus the architecture they were built for.
/// Names are grouped by prefix: "enc." (phi), "dec." (theta), "ratio." (psi)
/// and "pseudo." (lambda).
struct ModelBundle {
  Architecture arch;
  ParamMap params;

  std::vector<std::string> names_with_prefix(std::string_view prefix) const;
  std::vector<std::string> encoder_names() const { return names_with_prefix("enc."); }
  std::vector<std::string> decoder_names() const { return names_with_prefix("dec."); }
  std::vector<std::string> ratio_names() const { return names_with_prefix("ratio."); }
  std::vector<std::string> pseudo_names() const { return names_with_prefix("pseudo."); }
};

/// Glorot-initialized bundle. For VampPrior, pseudo-inputs start at randomly
/// chosen rows of `train` plus N(0, 0.1^2) noise (clipped to [0, 1] when the
/// architecture clips pseudo-inputs).
ModelBundle make_bundle(const Architecture& arch, Rng& rng, const Tensor* train = nullptr);

/// Checkpoint whose metadata is {"architecture": ..., "info": <info_json>}.
Checkpoint to_checkpoint(const ModelBundle& bundle, std::string_view info_json = "{}");

/// Rebuilds a bundle, checking that the stored parameters match the stored
/// architecture by name and shape. Throws CheckpointError on a mismatch.
ModelBundle bundle_from_checkpoint(const Checkpoint& ckpt);

/// Per-row Gaussian parameters of an encoded batch.
struct GaussianBatch {
  Tensor mu;       // [B, d]
  Tensor log_var;  // [B, d]

  std::size_t size() const { return mu.rows(); }
  dist::DiagGaussianParams row(std::size_t i) const;
};

namespace model {

struct EncoderNodes {
  diff::Node mu;
  diff::Node log_var;
};

struct DecoderNodes {
  diff::Node mean;
  diff::Node log_var;  // Gaussian likelihood only
};

EncoderNodes encode(const nn::ParamScope& scope, const Architecture& arch, diff::Node x);
DecoderNodes decode(const nn::ParamScope& scope, const Architecture& arch, diff::Node z);

/// log p(x | z) per row for the architecture's likelihood.
diff::Node log_likelihood(diff::Graph& g, const Architecture& arch, const DecoderNodes& dec, diff::Node x);

/// Ratio-net logit T(z) per row ([B]). Train mode draws dropout masks from `rng`.
diff::Node ratio_logit(const nn::ParamScope& scope, const Architecture& arch, diff::Node z, nn::Mode mode,
                       Rng* rng = nullptr);

/// Pseudo-inputs as fed to the encoder, [K, D].
diff::Node pseudo_inputs(const nn::ParamScope& scope, const Architecture& arch);

/// log((1/K) sum_k N(z | mu_k, exp(log_var_k))) per row of z, via log-sum-exp.
diff::Node mixture_log_density(diff::Graph& g, diff::Node comp_mu, diff::Node comp_log_var, diff::Node z);

/// VampPrior log-density of each row of z.
diff::Node vamp_log_prior(const nn::ParamScope& scope, const Architecture& arch, diff::Node z);

// Value-level helpers (no gradients, eval mode unless stated).
GaussianBatch encode(const ModelBundle& bundle, const Tensor& x);
Tensor decode_mean(const ModelBundle& bundle, const Tensor& z);
Tensor ratio_logit(const ModelBundle& bundle, const Tensor& z, nn::Mode mode = nn::Mode::Eval,
                   Rng* rng = nullptr);
Tensor vamp_log_prior(const ModelBundle& bundle, const Tensor& z);

}  // namespace model
}  // namespace ipvae
