#include "ipvae/klterm.hpp"

#include <cmath>
#include <stdexcept>

namespace ipvae::klterm {

using diff::Graph;
using diff::Node;
using nn::ParamScope;

namespace {

void require_samples(const dist::DiagGaussianParams& p, const Tensor& z, const char* what) {
  if (z.rank() != 2 || z.rows() == 0) throw std::invalid_argument(std::string(what) + ": empty sample set");
  if (z.cols() != p.dim()) {
    throw std::invalid_argument(std::string(what) + ": samples have dimension " + std::to_string(z.cols()) +
                                ", expected " + std::to_string(p.dim()));
  }
}

double mean_of(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v;
  return s / static_cast<double>(t.size());
}

Node clamped_logit(const ParamScope& scope, const Architecture& arch, Node z, nn::Mode mode, Rng* rng) {
  return scope.graph().clamp(model::ratio_logit(scope, arch, z, mode, rng), -kLogitClamp, kLogitClamp);
}

// Rows repeated `times` times: row l * B + i of the result is row i of `x`.
Tensor tile_rows(const Tensor& x, std::size_t times) {
  Tensor out({x.rows() * times, x.cols()});
  const auto src = x.data();
  auto dst = out.data();
  for (std::size_t l = 0; l < times; ++l) std::copy(src.begin(), src.end(), dst.begin() + l * src.size());
  return out;
}

// [L * B, B] selector with a one at (l * B + i, i).
Tensor tiling_selector(std::size_t batch, std::size_t times) {
  Tensor s({batch * times, batch});
  for (std::size_t l = 0; l < times; ++l) {
    for (std::size_t i = 0; i < batch; ++i) s.at(l * batch + i, i) = 1.0;
  }
  return s;
}

}  // namespace

KlEstimate kl_standard(const dist::DiagGaussianParams& p) {
  const double kl = dist::kl_diag_to_standard(p);
  return {kl, 0.0, kl};
}

KlEstimate kl_vamp_mc(const dist::DiagGaussianParams& p, const Tensor& z_samples, const ModelBundle& bundle) {
  require_samples(p, z_samples, "kl_vamp_mc");
  if (bundle.arch.prior.kind != PriorKind::VampPrior) throw std::invalid_argument("kl_vamp_mc: bundle has no VampPrior");
  Graph g;
  const ParamScope scope(g, bundle.params);
  const Node z = g.constant(z_samples);
  const Node log_q = dist::diag_gaussian_log_pdf(g, g.constant(Tensor::vector(p.mu())),
                                                 g.constant(Tensor::vector(p.log_var())), z);
  const Node log_prior = model::vamp_log_prior(scope, bundle.arch, z);
  const double kl = mean_of(g.value(g.sub(log_q, log_prior)));
  return {kl, 0.0, kl};
}

KlEstimate kl_implicit(const dist::DiagGaussianParams& p, const Tensor& z_samples, const ModelBundle& bundle) {
  require_samples(p, z_samples, "kl_implicit");
  Graph g;
  const ParamScope scope(g, bundle.params);
  const Node t = clamped_logit(scope, bundle.arch, g.constant(z_samples), nn::Mode::Eval, nullptr);
  KlEstimate e;
  e.closed_form_part = dist::kl_diag_to_standard(p);
  e.ratio_part = mean_of(g.value(t));
  e.total = e.closed_form_part - e.ratio_part;
  return e;
}

Node ratio_loss(const ParamScope& scope, const Architecture& arch, const Tensor& z_agg, const Tensor& z_prior,
                nn::Mode mode, Rng* rng) {
  if (z_agg.rows() == 0 || z_agg.rank() != 2) throw std::invalid_argument("ratio_loss: empty sample batch");
  if (z_agg.shape() != z_prior.shape()) {
    throw std::invalid_argument("ratio_loss: batch mismatch " + shape_string(z_agg.shape()) + " vs " +
                                shape_string(z_prior.shape()));
  }
  auto& g = scope.graph();
  const std::size_t n = z_agg.rows();
  Tensor stacked({2 * n, z_agg.cols()});
  std::copy(z_agg.data().begin(), z_agg.data().end(), stacked.data().begin());
  std::copy(z_prior.data().begin(), z_prior.data().end(), stacked.data().begin() + z_agg.size());
  Tensor sign({2 * n}, 1.0);
  for (std::size_t i = n; i < 2 * n; ++i) sign[i] = -1.0;
  // ln(1 - sigma(T)) = ln sigma(-T); with equal batch sizes the two means add up
  // to twice the mean over the stacked batch.
  const Node t = clamped_logit(scope, arch, g.constant(std::move(stacked)), mode, rng);
  return g.scale(g.mean(g.log_sigmoid(g.mul(t, g.constant(std::move(sign))))), 2.0);
}

double ratio_loss(const ModelBundle& bundle, const Tensor& z_agg, const Tensor& z_prior, nn::Mode mode, Rng* rng) {
  Graph g;
  return g.value(ratio_loss(ParamScope(g, bundle.params), bundle.arch, z_agg, z_prior, mode, rng)).item();
}

Tensor sample_aggregated(const GaussianBatch& posteriors, std::size_t n, Rng& rng) {
  const std::size_t count = posteriors.size();
  if (count == 0) throw std::invalid_argument("sample_aggregated: no data points");
  const std::size_t d = posteriors.mu.cols();
  std::uniform_int_distribution<std::size_t> pick(0, count - 1);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor z({n, d});
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t i = pick(rng);
    for (std::size_t c = 0; c < d; ++c) {
      z.at(r, c) = normal(rng) * std::exp(0.5 * posteriors.log_var.at(i, c)) + posteriors.mu.at(i, c);
    }
  }
  return z;
}

Tensor sample_aggregated(const ModelBundle& bundle, const Tensor& data, std::size_t n, Rng& rng) {
  return sample_aggregated(model::encode(bundle, data), n, rng);
}

ScoreResidual score_gradient_residual(const ModelBundle& bundle, const Tensor& data, std::size_t n_samples,
                                      Rng& rng) {
  if (n_samples < 2) throw std::invalid_argument("score_gradient_residual: need at least 2 samples");
  const auto posteriors = model::encode(bundle, data);
  const std::size_t batches = std::min<std::size_t>(100, n_samples);
  std::vector<std::vector<double>> batch_means;
  std::vector<std::size_t> batch_sizes;
  for (std::size_t b = 0; b < batches; ++b) {
    const std::size_t m = (b + 1) * n_samples / batches - b * n_samples / batches;
    const Tensor z = sample_aggregated(posteriors, m, rng);
    Graph g;
    const ParamScope scope(g, bundle.params);
    const auto enc = model::encode(scope, bundle.arch, g.constant(data));
    const Node loss = g.mean(model::mixture_log_density(g, enc.mu, enc.log_var, g.constant(z)));
    const auto grads = g.backward(loss);
    std::vector<double> flat;
    for (const auto& [name, grad] : grads) {
      if (!name.starts_with("enc.")) continue;
      flat.insert(flat.end(), grad.data().begin(), grad.data().end());
    }
    batch_means.push_back(std::move(flat));
    batch_sizes.push_back(m);
  }
  ScoreResidual r;
  r.n_samples = n_samples;
  const std::size_t dim = batch_means.front().size();
  r.mean_grad.assign(dim, 0.0);
  r.coord_se.assign(dim, 0.0);
  for (std::size_t b = 0; b < batches; ++b) {
    const double w = static_cast<double>(batch_sizes[b]) / static_cast<double>(n_samples);
    for (std::size_t j = 0; j < dim; ++j) r.mean_grad[j] += w * batch_means[b][j];
  }
  const double nb = static_cast<double>(batches);
  double norm2 = 0.0;
  double se2 = 0.0;
  for (std::size_t j = 0; j < dim; ++j) {
    double ss = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const double dev = batch_means[b][j] - r.mean_grad[j];
      ss += dev * dev;
    }
    r.coord_se[j] = batches > 1 ? std::sqrt(ss / (nb - 1.0) / nb) : 0.0;
    norm2 += r.mean_grad[j] * r.mean_grad[j];
    se2 += r.coord_se[j] * r.coord_se[j];
  }
  r.norm = std::sqrt(norm2);
  r.standard_error = std::sqrt(se2);
  return r;
}

ObjectiveNodes build_objective(Graph& g, const ModelBundle& bundle, const Tensor& x, const Tensor& eps,
                               const ObjectiveOptions& options) {
  const auto& arch = bundle.arch;
  const std::size_t batch = x.rows();
  if (x.rank() != 2 || batch == 0) throw std::invalid_argument("build_objective: empty batch");
  if (eps.rank() != 2 || eps.cols() != arch.latent_dim || eps.rows() == 0 || eps.rows() % batch != 0) {
    throw std::invalid_argument("build_objective: eps must be [L * " + std::to_string(batch) + ", " +
                                std::to_string(arch.latent_dim) + "], got " + shape_string(eps.shape()));
  }
  const std::size_t samples = eps.rows() / batch;
  const ParamScope scope(g, bundle.params);

  const Node xin = g.constant(x);
  const auto enc = model::encode(scope, arch, xin);
  Node mu = enc.mu;
  Node log_var = enc.log_var;
  Node x_rep = xin;
  if (samples > 1) {
    const Node sel = g.constant(tiling_selector(batch, samples));
    mu = g.matmul(sel, enc.mu);
    log_var = g.matmul(sel, enc.log_var);
    x_rep = g.constant(tile_rows(x, samples));
  }
  const Node z = dist::reparam_sample(g, mu, log_var, g.constant(eps));
  const Node log_lik = model::log_likelihood(g, arch, model::decode(scope, arch, z), x_rep);
  const Node log_q = dist::diag_gaussian_log_pdf(g, mu, log_var, z);

  const auto per_point = [&](Node v) {
    if (samples == 1) return v;
    const Node cols = g.transpose(g.reshape(v, {samples, batch}));
    return g.scale(g.sum_cols(cols), 1.0 / static_cast<double>(samples));
  };

  const bool implicit = arch.prior.kind == PriorKind::ImplicitOptimal;
  const Node log_base = arch.prior.kind == PriorKind::VampPrior ? model::vamp_log_prior(scope, arch, z)
                                                                 : dist::standard_normal_log_pdf(g, z);
  Node log_prior = log_base;
  ObjectiveNodes out;
  out.batch = batch;
  out.samples = samples;
  if (implicit) {
    const Node t = clamped_logit(scope.with_frozen(true), arch, z, nn::Mode::Eval, nullptr);
    log_prior = g.add(log_base, t);
    out.ratio = per_point(t);
  } else {
    out.ratio = g.constant(Tensor({batch}));
  }
  out.recon = per_point(log_lik);
  out.log_weight = g.add(g.sub(log_lik, log_q), log_prior);

  const bool analytic = options.kl_form == KlForm::Analytic && arch.prior.kind != PriorKind::VampPrior;
  out.kl_closed = analytic ? dist::kl_diag_to_standard(g, enc.mu, enc.log_var) : per_point(g.sub(log_q, log_base));
  if (options.kl_form == KlForm::MonteCarlo) {
    out.point_elbo = per_point(out.log_weight);
    out.kl_total = g.sub(out.recon, out.point_elbo);
  } else {
    out.kl_total = implicit ? g.sub(out.kl_closed, out.ratio) : out.kl_closed;
    out.point_elbo = g.sub(out.recon, out.kl_total);
  }
  out.elbo = g.mean(out.point_elbo);
  out.objective = options.beta == 1.0 ? out.elbo
                                      : g.mean(g.sub(out.recon, g.scale(out.kl_total, options.beta)));
  return out;
}

}  // namespace ipvae::klterm
