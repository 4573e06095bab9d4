#pragma once

#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ipvae/klterm.hpp"
#include "ipvae/model.hpp"

namespace ipvae::eval {

/// log((1/n) sum_i exp(v_i)), shifted by the maximum.
double log_mean_exp(std::span<const double> v);

/// Per-point ELBO for the rows of `x` with `eps` holding L * B standard-normal
/// rows (sample l of point i at row l * B + i). The implicit prior uses the
/// estimate KL(q || N(0, I)) - mean T.
std::vector<double> elbo(const ModelBundle& bundle, const Tensor& x, const Tensor& eps,
                         klterm::KlForm form = klterm::KlForm::Analytic);

/// Same with L fresh samples per point drawn from `rng`, evaluated in chunks.
std::vector<double> elbo(const ModelBundle& bundle, const Tensor& x, std::size_t samples, Rng& rng,
                         klterm::KlForm form = klterm::KlForm::Analytic);

/// Importance-sampled log p(x) per point: log-mean-exp over S samples of
/// log p(x|z) + log prior(z) - log q(z|x). The implicit prior substitutes
/// log N(z; 0, I) + T(z) for log q_phi(z).
std::vector<double> is_log_likelihood(const ModelBundle& bundle, const Tensor& x, const Tensor& eps);
std::vector<double> is_log_likelihood(const ModelBundle& bundle, const Tensor& x, std::size_t samples, Rng& rng);

double mean(std::span<const double> v);

struct EvalReport {
  std::string dataset;
  std::string split;
  std::string prior;
  std::size_t is_samples = 10;
  std::size_t points = 0;
  double elbo = 0.0;     // analytic-KL ELBO, one sample per point
  double mc_elbo = 0.0;  // mean log importance weight, one sample per point
  double is_log_likelihood = 0.0;
  bool estimator_dependent = false;  // true for the implicit prior

  std::string to_json() const;
  static EvalReport from_json(std::string_view text);
};

/// ELBO, MC-ELBO and IS log-likelihood of `x`, all driven by one RNG seeded
/// with `seed`.
EvalReport evaluate(const ModelBundle& bundle, const Tensor& x, std::size_t is_samples, std::uint64_t seed);

struct MetricSummary {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation
  std::vector<double> values;
  std::string formatted;  // "mean ± std" with two decimals
};

/// Summary of several runs keyed by metric ("elbo", "mc_elbo", "is_log_likelihood").
struct SeedSummary {
  std::size_t runs = 0;
  std::map<std::string, MetricSummary> metrics;

  std::string to_json() const;
  static SeedSummary from_json(std::string_view text);
};

/// "-85.50 ± 0.71"
std::string format_mean_std(double mean, double stddev);

/// Throws std::invalid_argument on an empty list. A single report gets std 0.
SeedSummary aggregate_seeds(std::span<const EvalReport> reports);

/// Writes "z0,z1,...,label" and one sampled z ~ q(z|x) per row. `columns`
/// limits the exported latent coordinates (0 exports all). Rows without a
/// label get -1. Returns the number of rows written.
std::size_t export_latents(const ModelBundle& bundle, const Tensor& x, std::span<const int> labels, std::ostream& out,
                           Rng& rng, std::size_t columns = 0);

}  // namespace ipvae::eval
