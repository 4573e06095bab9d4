#include "ipvae/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <nlohmann/json.hpp>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace ipvae::eval {

using diff::Graph;

namespace {

// Rows of the largest graph built at once during evaluation.
constexpr std::size_t kChunkRows = 2000;

std::size_t points_per_chunk(std::size_t samples) { return std::max<std::size_t>(1, kChunkRows / samples); }

// Rows of `eps` that belong to points [begin, end) of a batch of `batch` points.
Tensor eps_slice(const Tensor& eps, std::size_t batch, std::size_t begin, std::size_t end) {
  const std::size_t samples = eps.rows() / batch;
  const std::size_t d = eps.cols();
  Tensor out({samples * (end - begin), d});
  for (std::size_t l = 0; l < samples; ++l) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto src = eps.row(l * batch + i);
      std::copy(src.begin(), src.end(), out.row(l * (end - begin) + (i - begin)).begin());
    }
  }
  return out;
}

void check_eps(const Tensor& x, const Tensor& eps, const ModelBundle& bundle) {
  if (x.rank() != 2 || x.rows() == 0) throw std::invalid_argument("evaluation needs a non-empty [B, D] batch");
  if (eps.rank() != 2 || eps.cols() != bundle.arch.latent_dim || eps.rows() % x.rows() != 0 || eps.rows() == 0) {
    throw std::invalid_argument("eps must be [S * B, d], got " + shape_string(eps.shape()));
  }
}

// Visits chunks of points with their eps rows; `fn(x_chunk, eps_chunk)` returns per-point values.
template <typename Fn>
std::vector<double> chunked(const Tensor& x, const Tensor& eps, Fn fn) {
  const std::size_t batch = x.rows();
  const std::size_t step = points_per_chunk(eps.rows() / batch);
  std::vector<double> out;
  out.reserve(batch);
  for (std::size_t begin = 0; begin < batch; begin += step) {
    const std::size_t end = std::min(batch, begin + step);
    const bool whole = begin == 0 && end == batch;
    const auto values = whole ? fn(x, eps) : fn(x.rows_slice(begin, end), eps_slice(eps, batch, begin, end));
    out.insert(out.end(), values.begin(), values.end());
  }
  return out;
}

std::vector<double> to_vector(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

double log_mean_exp(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("log_mean_exp of an empty set");
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s / static_cast<double>(v.size()));
}

double mean(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("mean of an empty set");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::vector<double> elbo(const ModelBundle& bundle, const Tensor& x, const Tensor& eps, klterm::KlForm form) {
  check_eps(x, eps, bundle);
  return chunked(x, eps, [&](const Tensor& xc, const Tensor& ec) {
    Graph g;
    const auto nodes = klterm::build_objective(g, bundle, xc, ec, {.beta = 1.0, .kl_form = form});
    return to_vector(g.value(nodes.point_elbo));
  });
}

std::vector<double> elbo(const ModelBundle& bundle, const Tensor& x, std::size_t samples, Rng& rng,
                         klterm::KlForm form) {
  if (samples == 0) throw std::invalid_argument("elbo: need at least one sample");
  return elbo(bundle, x, standard_normal({samples * x.rows(), bundle.arch.latent_dim}, rng), form);
}

std::vector<double> is_log_likelihood(const ModelBundle& bundle, const Tensor& x, const Tensor& eps) {
  check_eps(x, eps, bundle);
  return chunked(x, eps, [&](const Tensor& xc, const Tensor& ec) {
    Graph g;
    const auto nodes = klterm::build_objective(g, bundle, xc, ec, {.beta = 1.0, .kl_form = klterm::KlForm::MonteCarlo});
    const Tensor& w = g.value(nodes.log_weight);
    const std::size_t b = xc.rows();
    const std::size_t s = nodes.samples;
    std::vector<double> out(b);
    std::vector<double> per_point(s);
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t l = 0; l < s; ++l) per_point[l] = w[l * b + i];
      out[i] = log_mean_exp(per_point);
    }
    return out;
  });
}

std::vector<double> is_log_likelihood(const ModelBundle& bundle, const Tensor& x, std::size_t samples, Rng& rng) {
  if (samples == 0) throw std::invalid_argument("is_log_likelihood: S must be >= 1");
  return is_log_likelihood(bundle, x, standard_normal({samples * x.rows(), bundle.arch.latent_dim}, rng));
}

std::string EvalReport::to_json() const {
  nlohmann::json j = {{"dataset", dataset},
                      {"split", split},
                      {"prior", prior},
                      {"is_samples", is_samples},
                      {"points", points},
                      {"elbo", elbo},
                      {"mc_elbo", mc_elbo},
                      {"is_log_likelihood", is_log_likelihood},
                      {"estimator_dependent", estimator_dependent}};
  return j.dump(2);
}

EvalReport EvalReport::from_json(std::string_view text) {
  const auto j = nlohmann::json::parse(text);
  EvalReport r;
  r.dataset = j.at("dataset").get<std::string>();
  r.split = j.at("split").get<std::string>();
  r.prior = j.at("prior").get<std::string>();
  r.is_samples = j.at("is_samples").get<std::size_t>();
  r.points = j.at("points").get<std::size_t>();
  r.elbo = j.at("elbo").get<double>();
  r.mc_elbo = j.at("mc_elbo").get<double>();
  r.is_log_likelihood = j.at("is_log_likelihood").get<double>();
  r.estimator_dependent = j.at("estimator_dependent").get<bool>();
  return r;
}

EvalReport evaluate(const ModelBundle& bundle, const Tensor& x, std::size_t is_samples, std::uint64_t seed) {
  Rng rng(seed);
  const Tensor eps1 = standard_normal({x.rows(), bundle.arch.latent_dim}, rng);
  EvalReport r;
  r.prior = to_string(bundle.arch.prior.kind);
  r.is_samples = is_samples;
  r.points = x.rows();
  r.elbo = mean(elbo(bundle, x, eps1, klterm::KlForm::Analytic));
  r.mc_elbo = mean(elbo(bundle, x, eps1, klterm::KlForm::MonteCarlo));
  r.is_log_likelihood = mean(is_log_likelihood(bundle, x, is_samples, rng));
  r.estimator_dependent = bundle.arch.prior.kind == PriorKind::ImplicitOptimal;
  return r;
}

std::string format_mean_std(double mean, double stddev) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f ± %.2f", mean, stddev);
  return buf;
}

SeedSummary aggregate_seeds(std::span<const EvalReport> reports) {
  if (reports.empty()) throw std::invalid_argument("aggregate_seeds: no reports");
  SeedSummary s;
  s.runs = reports.size();
  const auto add = [&](const std::string& key, auto field) {
    MetricSummary m;
    for (const auto& r : reports) m.values.push_back(r.*field);
    m.mean = mean(m.values);
    double ss = 0.0;
    for (double v : m.values) ss += (v - m.mean) * (v - m.mean);
    m.stddev = m.values.size() > 1 ? std::sqrt(ss / static_cast<double>(m.values.size() - 1)) : 0.0;
    m.formatted = format_mean_std(m.mean, m.stddev);
    s.metrics[key] = std::move(m);
  };
  add("elbo", &EvalReport::elbo);
  add("mc_elbo", &EvalReport::mc_elbo);
  add("is_log_likelihood", &EvalReport::is_log_likelihood);
  return s;
}

std::string SeedSummary::to_json() const {
  nlohmann::json j;
  j["runs"] = runs;
  for (const auto& [key, m] : metrics) {
    j["metrics"][key] = {{"mean", m.mean}, {"stddev", m.stddev}, {"values", m.values}, {"formatted", m.formatted}};
  }
  return j.dump(2);
}

SeedSummary SeedSummary::from_json(std::string_view text) {
  const auto j = nlohmann::json::parse(text);
  SeedSummary s;
  s.runs = j.at("runs").get<std::size_t>();
  for (const auto& [key, m] : j.at("metrics").items()) {
    s.metrics[key] = {m.at("mean").get<double>(), m.at("stddev").get<double>(),
                      m.at("values").get<std::vector<double>>(), m.at("formatted").get<std::string>()};
  }
  return s;
}

std::size_t export_latents(const ModelBundle& bundle, const Tensor& x, std::span<const int> labels, std::ostream& out,
                           Rng& rng, std::size_t columns) {
  if (!labels.empty() && labels.size() != x.rows()) throw std::invalid_argument("export_latents: label count mismatch");
  const std::size_t d = bundle.arch.latent_dim;
  const std::size_t cols = columns == 0 ? d : std::min(columns, d);
  for (std::size_t c = 0; c < cols; ++c) out << 'z' << c << ',';
  out << "label\n";
  const std::size_t n = x.rank() == 2 ? x.rows() : 0;
  const std::size_t step = kChunkRows;
  char buf[32];
  for (std::size_t begin = 0; begin < n; begin += step) {
    const std::size_t end = std::min(n, begin + step);
    const auto post = model::encode(bundle, x.rows_slice(begin, end));
    const Tensor eps = standard_normal({end - begin, d}, rng);
    for (std::size_t i = 0; i < end - begin; ++i) {
      for (std::size_t c = 0; c < cols; ++c) {
        const double z = eps.at(i, c) * std::exp(0.5 * post.log_var.at(i, c)) + post.mu.at(i, c);
        std::snprintf(buf, sizeof buf, "%.17g", z);
        out << buf << ',';
      }
      out << (labels.empty() ? -1 : labels[begin + i]) << '\n';
    }
  }
  if (!out) throw std::runtime_error("export_latents: write failed");
  return n;
}

}  // namespace ipvae::eval
