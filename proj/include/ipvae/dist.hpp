#pragma once

#include <span>
#include <vector>

#include "ipvae/graph.hpp"

/// Log-densities, reparameterized sampling and the closed-form Gaussian KL.
///
/// Graph builders operate on batches: every row is one datapoint and results
/// are [B] vectors. Mean/log-variance operands may also be plain [d] vectors,
/// in which case they are shared by every row. The value-level overloads
/// evaluate the same graphs for a single datapoint.
namespace ipvae::dist {

inline constexpr double kEncoderLogVarMin = -10.0;
inline constexpr double kEncoderLogVarMax = 10.0;
inline constexpr double kDecoderLogVarMin = -7.0;
inline constexpr double kDecoderLogVarMax = 0.0;
inline constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 ln(2 pi)

class DiagGaussianParams {
 public:
  /// Clamps log_var into [kEncoderLogVarMin, kEncoderLogVarMax].
  DiagGaussianParams(std::vector<double> mu, std::vector<double> log_var);

  const std::vector<double>& mu() const { return mu_; }
  const std::vector<double>& log_var() const { return log_var_; }
  std::size_t dim() const { return mu_.size(); }

 private:
  std::vector<double> mu_;
  std::vector<double> log_var_;
};

struct BernoulliParams {
  /// Throws std::invalid_argument if any mean is outside [0, 1].
  explicit BernoulliParams(std::vector<double> mean);
  std::vector<double> mean;
};

struct GaussianLikelihoodParams {
  /// Throws if a mean is outside [0, 1]; clamps log_var into [-7, 0].
  GaussianLikelihoodParams(std::vector<double> mean, std::vector<double> log_var);
  std::vector<double> mean;
  std::vector<double> log_var;
};

// --- graph builders --------------------------------------------------------

/// z = mu + eps * exp(0.5 log_var)
diff::Node reparam_sample(diff::Graph& g, diff::Node mu, diff::Node log_var, diff::Node eps);

/// 0.5 * sum_d (mu^2 + exp(log_var) - log_var - 1), per row.
diff::Node kl_diag_to_standard(diff::Graph& g, diff::Node mu, diff::Node log_var);

diff::Node diag_gaussian_log_pdf(diff::Graph& g, diff::Node mu, diff::Node log_var, diff::Node z);

/// sum_d x ln p + (1 - x) ln(1 - p), with logs floored at 1e-12.
diff::Node bernoulli_log_pmf(diff::Graph& g, diff::Node mean, diff::Node x);

diff::Node gaussian_likelihood_log_pdf(diff::Graph& g, diff::Node mean, diff::Node log_var, diff::Node x);

/// Standard-normal log-density per row.
diff::Node standard_normal_log_pdf(diff::Graph& g, diff::Node z);

// --- single datapoint ------------------------------------------------------

std::vector<double> reparam_sample(const DiagGaussianParams& p, std::span<const double> eps);
double kl_diag_to_standard(const DiagGaussianParams& p);
double diag_gaussian_log_pdf(const DiagGaussianParams& p, std::span<const double> z);
double bernoulli_log_pmf(const BernoulliParams& p, std::span<const double> x);
double gaussian_likelihood_log_pdf(const GaussianLikelihoodParams& p, std::span<const double> x);

}  // namespace ipvae::dist
