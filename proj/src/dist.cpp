#include "ipvae/dist.hpp"

#include <algorithm>
#include <stdexcept>

namespace ipvae::dist {

using diff::Graph;
using diff::Node;

namespace {

std::size_t feature_dim(const Graph& g, Node n) {
  const auto& s = g.shape(n);
  return s.empty() ? 1 : s.back();
}

Tensor row_of(std::span<const double> v) {
  return Tensor::matrix(1, v.size(), std::vector<double>(v.begin(), v.end()));
}

void require_same_dim(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw std::invalid_argument(std::string(what) + ": dimension mismatch (" + std::to_string(a) + " vs " +
                                std::to_string(b) + ")");
  }
}

}  // namespace

DiagGaussianParams::DiagGaussianParams(std::vector<double> mu, std::vector<double> log_var)
    : mu_(std::move(mu)), log_var_(std::move(log_var)) {
  require_same_dim(mu_.size(), log_var_.size(), "DiagGaussianParams");
  for (double& v : log_var_) v = std::clamp(v, kEncoderLogVarMin, kEncoderLogVarMax);
}

BernoulliParams::BernoulliParams(std::vector<double> m) : mean(std::move(m)) {
  for (double v : mean) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("BernoulliParams: mean outside [0, 1]");
  }
}

GaussianLikelihoodParams::GaussianLikelihoodParams(std::vector<double> m, std::vector<double> lv)
    : mean(std::move(m)), log_var(std::move(lv)) {
  require_same_dim(mean.size(), log_var.size(), "GaussianLikelihoodParams");
  for (double v : mean) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("GaussianLikelihoodParams: mean outside [0, 1]");
  }
  for (double& v : log_var) v = std::clamp(v, kDecoderLogVarMin, kDecoderLogVarMax);
}

Node reparam_sample(Graph& g, Node mu, Node log_var, Node eps) {
  return g.add(g.mul(eps, g.exp(g.scale(log_var, 0.5))), mu);
}

Node kl_diag_to_standard(Graph& g, Node mu, Node log_var) {
  const double d = static_cast<double>(feature_dim(g, mu));
  const Node terms = g.sub(g.add(g.square(mu), g.exp(log_var)), log_var);
  return g.scale(g.shift(g.sum_cols(terms), -d), 0.5);
}

Node diag_gaussian_log_pdf(Graph& g, Node mu, Node log_var, Node z) {
  const double d = static_cast<double>(feature_dim(g, z));
  const Node inv_var = g.exp(g.scale(log_var, -1.0));
  const Node mahalanobis = g.mul(g.square(g.sub(z, mu)), inv_var);
  const Node terms = g.add(mahalanobis, log_var);
  return g.shift(g.scale(g.sum_cols(terms), -0.5), -d * kHalfLog2Pi);
}

Node bernoulli_log_pmf(Graph& g, Node mean, Node x) {
  const Node one_minus_x = g.shift(g.scale(x, -1.0), 1.0);
  const Node one_minus_p = g.shift(g.scale(mean, -1.0), 1.0);
  const Node terms = g.add(g.mul(x, g.log(mean)), g.mul(one_minus_x, g.log(one_minus_p)));
  return g.sum_cols(terms);
}

Node gaussian_likelihood_log_pdf(Graph& g, Node mean, Node log_var, Node x) {
  return diag_gaussian_log_pdf(g, mean, log_var, x);
}

Node standard_normal_log_pdf(Graph& g, Node z) {
  const double d = static_cast<double>(feature_dim(g, z));
  return g.shift(g.scale(g.sum_cols(g.square(z)), -0.5), -d * kHalfLog2Pi);
}

std::vector<double> reparam_sample(const DiagGaussianParams& p, std::span<const double> eps) {
  require_same_dim(p.dim(), eps.size(), "reparam_sample");
  Graph g;
  const Node z = reparam_sample(g, g.constant(row_of(p.mu())), g.constant(row_of(p.log_var())),
                                g.constant(row_of(eps)));
  const auto v = g.value(z).data();
  return {v.begin(), v.end()};
}

double kl_diag_to_standard(const DiagGaussianParams& p) {
  Graph g;
  return g.value(kl_diag_to_standard(g, g.constant(row_of(p.mu())), g.constant(row_of(p.log_var()))))[0];
}

double diag_gaussian_log_pdf(const DiagGaussianParams& p, std::span<const double> z) {
  require_same_dim(p.dim(), z.size(), "diag_gaussian_log_pdf");
  Graph g;
  return g.value(diag_gaussian_log_pdf(g, g.constant(row_of(p.mu())), g.constant(row_of(p.log_var())),
                                       g.constant(row_of(z))))[0];
}

double bernoulli_log_pmf(const BernoulliParams& p, std::span<const double> x) {
  require_same_dim(p.mean.size(), x.size(), "bernoulli_log_pmf");
  Graph g;
  return g.value(bernoulli_log_pmf(g, g.constant(row_of(p.mean)), g.constant(row_of(x))))[0];
}

double gaussian_likelihood_log_pdf(const GaussianLikelihoodParams& p, std::span<const double> x) {
  require_same_dim(p.mean.size(), x.size(), "gaussian_likelihood_log_pdf");
  Graph g;
  return g.value(gaussian_likelihood_log_pdf(g, g.constant(row_of(p.mean)), g.constant(row_of(p.log_var)),
                                             g.constant(row_of(x))))[0];
}

}  // namespace ipvae::dist
