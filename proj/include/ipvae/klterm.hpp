#pragma once

#include <vector>

#include "ipvae/dist.hpp"
#include "ipvae/model.hpp"

/// KL strategies for the three priors, the density-ratio classifier objective
/// and the per-batch VAE objective shared by training and evaluation.
namespace ipvae::klterm {

/// Bound applied to T before it enters a sigmoid or a KL estimate.
inline constexpr double kLogitClamp = 30.0;

struct KlEstimate {
  double closed_form_part = 0.0;
  double ratio_part = 0.0;
  double total = 0.0;
};

/// Closed-form KL(q(z|x) || N(0, I)).
KlEstimate kl_standard(const dist::DiagGaussianParams& p);

/// Monte-Carlo KL(q(z|x) || vamp prior) over the rows of `z_samples` ([S, d]).
KlEstimate kl_vamp_mc(const dist::DiagGaussianParams& p, const Tensor& z_samples, const ModelBundle& bundle);

/// KL(q(z|x) || N(0, I)) - mean_s T(z_s), with the ratio net in eval mode.
KlEstimate kl_implicit(const dist::DiagGaussianParams& p, const Tensor& z_samples, const ModelBundle& bundle);

/// Classifier objective (to maximize): mean ln sigma(T(z_agg)) + mean ln(1 - sigma(T(z_prior))).
/// Both batches are stacked into one forward pass; in train mode each row
/// gets its own dropout mask. Throws std::invalid_argument on unequal or
/// empty batches.
diff::Node ratio_loss(const nn::ParamScope& scope, const Architecture& arch, const Tensor& z_agg,
                      const Tensor& z_prior, nn::Mode mode, Rng* rng);
double ratio_loss(const ModelBundle& bundle, const Tensor& z_agg, const Tensor& z_prior, nn::Mode mode,
                  Rng* rng = nullptr);

/// One z per row: rows of `data` picked uniformly at random, encoded and
/// reparameterized. Returns [n, d].
Tensor sample_aggregated(const ModelBundle& bundle, const Tensor& data, std::size_t n, Rng& rng);

/// Same, from pre-computed encoder outputs.
Tensor sample_aggregated(const GaussianBatch& posteriors, std::size_t n, Rng& rng);

struct ScoreResidual {
  double norm = 0.0;               // |mean gradient|
  double standard_error = 0.0;     // sqrt(sum_j SE_j^2), the expected norm under a zero mean
  std::vector<double> mean_grad;   // per encoder coordinate, in ParamMap order
  std::vector<double> coord_se;    // per-coordinate standard error from batch means
  std::size_t n_samples = 0;
};

/// Monte-Carlo average of grad_phi ln q_phi(z) over z ~ q_phi(z), where
/// q_phi(z) is the aggregated posterior of `data`. Samples are held fixed
/// (score function). Standard errors come from up to 100 equal batches.
ScoreResidual score_gradient_residual(const ModelBundle& bundle, const Tensor& data, std::size_t n_samples,
                                      Rng& rng);

// --- VAE objective -----------------------------------------------------------

/// Analytic uses the closed-form Gaussian KL where one exists (standard and
/// implicit priors). MonteCarlo uses log q(z|x) - log p(z) at the sampled z,
/// which makes the ELBO the mean log importance weight.
enum class KlForm { Analytic, MonteCarlo };

struct ObjectiveOptions {
  double beta = 1.0;
  KlForm kl_form = KlForm::Analytic;
};

/// Nodes of the per-batch objective. Per-point vectors are [B]; log_weight is
/// [L * B] with sample l of point i at row l * B + i.
struct ObjectiveNodes {
  diff::Node recon;        // mean_l log p(x | z_l)
  diff::Node kl_closed;    // closed-form (or MC) part
  diff::Node ratio;        // mean_l T(z_l), implicit prior only
  diff::Node kl_total;     // kl_closed - ratio
  diff::Node log_weight;   // log p(x|z) + log prior(z) - log q(z|x) per sample
  diff::Node point_elbo;   // recon - kl_total
  diff::Node objective;    // mean_i (recon - beta * kl_total), scalar
  diff::Node elbo;         // mean_i point_elbo, scalar
  std::size_t batch = 0;
  std::size_t samples = 0;
};

/// `eps` holds L * B standard-normal rows of the latent dimension. Gradients
/// reach theta, phi and lambda; the ratio net is frozen and in eval mode.
ObjectiveNodes build_objective(diff::Graph& g, const ModelBundle& bundle, const Tensor& x, const Tensor& eps,
                               const ObjectiveOptions& options = {});

}  // namespace ipvae::klterm
