// Acceptance suite. Prints one PASS/FAIL line per criterion and exits 1 when
// any selected criterion fails.

#include <CLI11.hpp>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <nlohmann/json.hpp>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ipvae/config.hpp"
#include "ipvae/data.hpp"
#include "ipvae/dist.hpp"
#include "ipvae/eval.hpp"
#include "ipvae/finite_diff.hpp"
#include "ipvae/klterm.hpp"
#include "ipvae/model.hpp"
#include "ipvae/trainer.hpp"

namespace {

using namespace ipvae;
namespace fs = std::filesystem;
using diff::Graph;
using diff::Node;
using nlohmann::json;

template <typename... Args>
std::string strf(const char* fmt, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return buf;
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

class CpuTimer {
 public:
  double seconds() const { return static_cast<double>(std::clock() - start_) / CLOCKS_PER_SEC; }

 private:
  std::clock_t start_ = std::clock();
};

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double log_sum_exp(std::span<const double> v) {
  const double m = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

// P(Binomial(n, 1/2) >= k).
double sign_test_p(std::size_t k, std::size_t n) {
  double tail = 0.0;
  for (std::size_t j = k; j <= n; ++j) {
    tail += std::exp(std::lgamma(n + 1.0) - std::lgamma(j + 1.0) - std::lgamma(n - j + 1.0) -
                     static_cast<double>(n) * std::numbers::ln2);
  }
  return tail;
}

Tensor gaussian_samples(const dist::DiagGaussianParams& p, std::size_t n, Rng& rng) {
  Tensor z = standard_normal({n, p.dim()}, rng);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < p.dim(); ++d) z.at(i, d) = p.mu()[d] + z.at(i, d) * std::exp(0.5 * p.log_var()[d]);
  }
  return z;
}

// Trains the ratio net against N(0, I) with a learning rate that drops tenfold
// after each third of the steps.
template <typename Sampler>
void fit_ratio(ModelBundle& b, Sampler agg, std::size_t steps, std::size_t batch, double lr, Rng& rng) {
  for (int phase = 0; phase < 3; ++phase) {
    nn::Adam adam({.lr = lr}, b.ratio_names());
    for (std::size_t s = 0; s < steps / 3; ++s) {
      const Tensor z1 = agg(batch);
      const Tensor z0 = standard_normal({batch, b.arch.latent_dim}, rng);
      train::ratio_step(b, adam, z1, z0, rng);
    }
    lr /= 10.0;
  }
}

// Distinct rows of x with their multiplicities.
std::vector<std::pair<std::vector<double>, double>> distinct_rows(const Tensor& x) {
  std::map<std::vector<double>, double> counts;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto r = x.row(i);
    counts[{r.begin(), r.end()}] += 1.0;
  }
  return {counts.begin(), counts.end()};
}

// ELBO of a Bernoulli model with the aggregated posterior of `train` as the
// prior, evaluated exactly as a mixture instead of through the ratio net.
double exact_aggregate_elbo(const ModelBundle& b, const Tensor& train, const Tensor& valid, std::size_t samples,
                            std::uint64_t seed) {
  const auto comps = distinct_rows(train);
  Tensor comp_x({comps.size(), train.cols()});
  for (std::size_t k = 0; k < comps.size(); ++k) std::copy(comps[k].first.begin(), comps[k].first.end(), comp_x.row(k).begin());
  const auto comp_post = model::encode(b, comp_x);
  std::vector<double> log_w(comps.size());
  for (std::size_t k = 0; k < comps.size(); ++k) log_w[k] = std::log(comps[k].second / static_cast<double>(train.rows()));

  Rng rng(seed);
  double total = 0.0;
  for (const auto& [x, count] : distinct_rows(valid)) {
    const Tensor xt({1, x.size()}, x);
    const auto p = model::encode(b, xt).row(0);
    const Tensor z = gaussian_samples(p, samples, rng);
    const Tensor mean = model::decode_mean(b, z);
    double sum = 0.0;
    std::vector<double> terms(comps.size());
    for (std::size_t s = 0; s < samples; ++s) {
      const auto m = mean.row(s);
      for (std::size_t k = 0; k < comps.size(); ++k) {
        terms[k] = log_w[k] + dist::diag_gaussian_log_pdf(comp_post.row(k), z.row(s));
      }
      sum += dist::bernoulli_log_pmf(dist::BernoulliParams({m.begin(), m.end()}), x) + log_sum_exp(terms) -
             dist::diag_gaussian_log_pdf(p, z.row(s));
    }
    total += count * sum / static_cast<double>(samples);
  }
  return total / static_cast<double>(valid.rows());
}

struct Context {
  fs::path data_root;
};

// --- 1, 2: OneHot ---------------------------------------------------------------

constexpr std::size_t kOneHotEpochs = 60;
constexpr std::size_t kOneHotWarmup = 20;
constexpr std::uint64_t kOneHotSeeds[] = {1, 2, 3, 4};

struct OneHotRun {
  PriorKind prior;
  std::uint64_t seed;
  double valid_elbo;
  double exact_elbo;  // aggregated-posterior prior in closed form, implicit runs only
  ModelBundle best;
};

struct OneHotStudy {
  data::Dataset dataset;
  std::vector<OneHotRun> runs;
  double cpu_seconds = 0.0;

  std::vector<const OneHotRun*> of(PriorKind kind) const {
    std::vector<const OneHotRun*> out;
    for (const auto& r : runs) {
      if (r.prior == kind) out.push_back(&r);
    }
    return out;
  }
  double mean_valid(PriorKind kind) const {
    std::vector<double> v;
    for (const auto* r : of(kind)) v.push_back(r->valid_elbo);
    return mean_of(v);
  }
};

const OneHotStudy& onehot_study(const Context& ctx) {
  static std::optional<OneHotStudy> study;
  if (study) return *study;
  study.emplace();
  const CpuTimer timer;
  for (const char* prior : {"standard", "vamp", "implicit"}) {
    const auto config = RunConfig::from_json(
        json{{"dataset", "onehot"}, {"prior", prior}, {"max_epochs", kOneHotEpochs}, {"warmup_epochs", kOneHotWarmup}}
            .dump());
    study->dataset = data::load_dataset("onehot", ctx.data_root, config.data_seed, config.onehot_valid_from_train);
    const auto arch = config.architecture(study->dataset);
    for (std::uint64_t seed : kOneHotSeeds) {
      auto result = train::train(arch, config.train_config(study->dataset, seed), study->dataset);
      OneHotRun run{config.prior, seed, result.state.best_valid_elbo, std::nan(""), std::move(result.best)};
      if (run.prior == PriorKind::ImplicitOptimal) {
        run.exact_elbo = exact_aggregate_elbo(run.best, study->dataset.train.x, study->dataset.valid.x, 4000, seed);
      }
      std::cerr << strf("  onehot %-8s seed %llu: best valid ELBO %.4f", prior, static_cast<unsigned long long>(seed),
                        run.valid_elbo)
                << (std::isnan(run.exact_elbo) ? "" : strf(" (exact %.4f)", run.exact_elbo)) << '\n';
      study->runs.push_back(std::move(run));
    }
  }
  study->cpu_seconds = timer.seconds();
  return *study;
}

Outcome criterion_onehot(const Context& ctx) {
  const auto& s = onehot_study(ctx);
  const double standard = s.mean_valid(PriorKind::StandardGaussian);
  const double vamp = s.mean_valid(PriorKind::VampPrior);
  const double implicit = s.mean_valid(PriorKind::ImplicitOptimal);
  std::vector<double> exact;
  for (const auto* r : s.of(PriorKind::ImplicitOptimal)) exact.push_back(r->exact_elbo);
  const double minutes = s.cpu_seconds / 60.0;
  const bool pass = implicit >= -1.55 && vamp >= -1.55 && implicit - standard >= 0.05 && minutes < 15.0;
  // The implicit run's validation ELBO goes through T; above the optimum it is
  // visibly an overestimate, so the exact value is printed next to it.
  return {pass, strf("valid ELBO over 4 seeds: implicit %.3f%s, vamp %.3f, standard %.3f (optimum %.3f); "
                     "implicit with the exact aggregated posterior %.3f; %.1f CPU min",
                     implicit, implicit > -std::log(4.0) ? " (estimate above the optimum)" : "", vamp, standard,
                     -std::log(4.0), mean_of(exact), minutes)};
}

// 1-nearest-centroid accuracy on the first two exported latent coordinates.
double nearest_centroid_accuracy(const std::string& csv) {
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  std::vector<std::array<double, 2>> z;
  std::vector<int> labels;
  while (std::getline(in, line)) {
    std::vector<double> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(std::stod(cell));
    z.push_back({cells[0], cells[1]});
    labels.push_back(static_cast<int>(cells.back()));
  }
  std::map<int, std::array<double, 3>> sums;
  for (std::size_t i = 0; i < z.size(); ++i) {
    auto& c = sums[labels[i]];
    c[0] += z[i][0];
    c[1] += z[i][1];
    c[2] += 1.0;
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (const auto& [label, c] : sums) {
      const double d = std::hypot(z[i][0] - c[0] / c[2], z[i][1] - c[1] / c[2]);
      if (d < best_d) {
        best_d = d;
        best = label;
      }
    }
    correct += best == labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(z.size());
}

Outcome criterion_latents(const Context& ctx) {
  const auto& s = onehot_study(ctx);
  const auto accuracy = [&](PriorKind kind) {
    std::vector<double> acc;
    for (const auto* r : s.of(kind)) {
      std::ostringstream out;
      Rng rng(r->seed);
      eval::export_latents(r->best, s.dataset.test.x, s.dataset.test.labels, out, rng);
      acc.push_back(nearest_centroid_accuracy(out.str()));
      std::cerr << strf("  onehot %-8s seed %llu: nearest-centroid accuracy %.3f", to_string(kind).c_str(),
                        static_cast<unsigned long long>(r->seed), acc.back())
                << '\n';
    }
    return acc;
  };
  const auto implicit = accuracy(PriorKind::ImplicitOptimal);
  const auto standard = accuracy(PriorKind::StandardGaussian);
  const double mi = mean_of(implicit), ms = mean_of(standard);
  return {mi >= 0.95 && ms < mi,
          strf("nearest-centroid accuracy over 4 seeds: implicit %.3f (min %.3f), standard %.3f (min %.3f)", mi,
               *std::min_element(implicit.begin(), implicit.end()), ms,
               *std::min_element(standard.begin(), standard.end()))};
}

// --- 3: density ratio -------------------------------------------------------------

Architecture ratio_arch(std::size_t data_dim) {
  Architecture a;
  a.data_dim = data_dim;
  a.latent_dim = 2;
  a.hidden = 2;
  a.ratio_hidden = 64;
  a.ratio_keep = 1.0;
  a.prior = {PriorKind::ImplicitOptimal, 0};
  return a;
}

Outcome criterion_ratio(const Context&) {
  const CpuTimer timer;
  Rng rng(3);
  auto b = make_bundle(ratio_arch(2), rng);
  const dist::DiagGaussianParams q({1.0, 1.0}, {std::log(0.25), std::log(0.25)});
  const dist::DiagGaussianParams p({0.0, 0.0}, {0.0, 0.0});
  fit_ratio(b, [&](std::size_t n) { return gaussian_samples(q, n, rng); }, 6000, 300, 3e-3, rng);
  const Tensor held_out = gaussian_samples(q, 1000, rng);
  const Tensor t = model::ratio_logit(b, held_out);
  double err = 0.0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < held_out.rows(); ++i) {
    const double lq = dist::diag_gaussian_log_pdf(q, held_out.row(i));
    const double lp = dist::diag_gaussian_log_pdf(p, held_out.row(i));
    if (lq < std::log(1e-3) || lp < std::log(1e-3)) continue;
    err += std::abs(t[i] - (lq - lp));
    ++used;
  }
  err /= static_cast<double>(used);
  const double seconds = timer.seconds();
  return {err < 0.1 && seconds < 60.0,
          strf("mean |T - log q/p| = %.4f over %zu of 1000 held-out points; %.1f CPU s", err, used, seconds)};
}

// --- 4: single point ----------------------------------------------------------------

Outcome criterion_single_point(const Context&) {
  data::Dataset d;
  d.name = "single-point";
  d.dim = 4;
  d.train.x = Tensor::matrix({{1.0, 0.0, 0.0, 0.0}});
  d.valid = d.test = d.train;
  auto config = RunConfig::from_json(R"({"prior": "implicit", "latent_dim": 2, "max_epochs": 200,
                                         "warmup_epochs": 20, "ratio_keep": 1.0})");
  auto result = train::train(config.architecture(d), config.train_config(d, 4), d);
  ModelBundle b = std::move(result.best);
  Rng rng(4);
  fit_ratio(b, [&](std::size_t n) { return klterm::sample_aggregated(b, d.train.x, n, rng); }, 3000, 300, 1e-3, rng);
  const auto p = model::encode(b, d.train.x).row(0);
  const auto kl = klterm::kl_implicit(p, gaussian_samples(p, 20000, rng), b);
  return {std::abs(kl.total) < 0.1, strf("kl_implicit.total = %.4f (closed-form part %.4f, mean T %.4f)", kl.total,
                                         kl.closed_form_part, kl.ratio_part)};
}

// --- 5: five-point toy ----------------------------------------------------------------

// Encoder with data_dim == hidden == latent_dim == 2 mapping x to mu = x up to
// the saturated gates, with a shared log-variance.
void identity_encoder(ModelBundle& b, double log_var) {
  for (const auto& name : b.encoder_names()) b.params.at(name) = Tensor(b.params.at(name).shape());
  const Tensor eye = Tensor::matrix({{1, 0}, {0, 1}});
  for (const char* l : {"enc.l1", "enc.l2"}) {
    b.params.at(std::string(l) + ".W_h") = eye;
    b.params.at(std::string(l) + ".b_g") = Tensor({2}, 40.0);
  }
  b.params.at("enc.mu.W") = eye;
  b.params.at("enc.logvar.b") = Tensor({2}, log_var);
}

Outcome criterion_five_points(const Context&) {
  Rng rng(5);
  auto b = make_bundle(ratio_arch(2), rng);
  identity_encoder(b, std::log(0.3));
  Tensor data({5, 2});
  for (std::size_t k = 0; k < 5; ++k) {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(k) / 5.0;
    data.at(k, 0) = 1.5 * std::cos(a);
    data.at(k, 1) = 1.5 * std::sin(a);
  }
  const auto post = model::encode(b, data);
  fit_ratio(b, [&](std::size_t n) { return klterm::sample_aggregated(post, n, rng); }, 6000, 300, 3e-3, rng);

  const double lo = -8.0, hi = 8.0;
  const std::size_t n = 400;
  const double h = (hi - lo) / n;
  double worst = 0.0;
  std::string values;
  for (std::size_t x = 0; x < 5; ++x) {
    const auto p = post.row(x);
    double quad = 0.0;
    std::vector<double> comps(5);
    for (std::size_t i = 0; i <= n; ++i) {
      for (std::size_t j = 0; j <= n; ++j) {
        const std::vector<double> z = {lo + h * i, lo + h * j};
        const double lq = dist::diag_gaussian_log_pdf(p, z);
        for (std::size_t k = 0; k < 5; ++k) comps[k] = dist::diag_gaussian_log_pdf(post.row(k), z);
        const double lm = log_sum_exp(comps) - std::log(5.0);
        const double w = ((i == 0 || i == n) ? 0.5 : 1.0) * ((j == 0 || j == n) ? 0.5 : 1.0);
        quad += w * std::exp(lq) * (lq - lm);
      }
    }
    quad *= h * h;
    const auto e = klterm::kl_implicit(p, gaussian_samples(p, 20000, rng), b);
    worst = std::max(worst, std::abs(e.total - quad));
    values += strf("%s%.3f/%.3f", x ? " " : "", e.total, quad);
  }
  return {worst < 0.1, strf("max |estimate - quadrature| = %.4f nats (estimate/quadrature: %s)", worst, values.c_str())};
}

// --- 6: gradients ---------------------------------------------------------------

Tensor uniform(Tensor::Shape shape, Rng& rng, double lo, double hi) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.data()) v = u(rng);
  return t;
}

struct GradientTally {
  double worst = 0.0;
  std::string worst_name;
  std::size_t checks = 0;

  void add(const std::string& name, const diff::FiniteDiffReport& r) {
    ++checks;
    if (r.max_rel_err >= worst) {
      worst = r.max_rel_err;
      worst_name = name;
    }
  }
};

void check_primitives(Rng& rng, GradientTally& tally) {
  std::uniform_int_distribution<std::size_t> extent(2, 5);
  const std::size_t rows = extent(rng), cols = extent(rng), inner = extent(rng);
  const ParamMap params = {{"a", uniform({rows, cols}, rng, -3, 3)},
                           {"b", uniform({rows, cols}, rng, -3, 3)},
                           {"v", uniform({cols}, rng, -3, 3)},
                           {"m", uniform({cols, inner}, rng, -3, 3)}};
  const Tensor weights = uniform({rows * cols * 2}, rng, -3, 3);
  using Op = std::function<Node(Graph&, Node, Node, Node, Node)>;
  const std::vector<std::pair<std::string, Op>> ops = {
      {"matmul", [](Graph& g, Node a, Node, Node, Node m) { return g.matmul(a, m); }},
      {"transpose", [](Graph& g, Node a, Node, Node, Node) { return g.transpose(a); }},
      {"reshape", [&](Graph& g, Node a, Node, Node, Node) { return g.reshape(a, {rows * cols}); }},
      {"add", [](Graph& g, Node a, Node b, Node, Node) { return g.add(a, b); }},
      {"bias", [](Graph& g, Node a, Node, Node v, Node) { return g.add(a, v); }},
      {"sub", [](Graph& g, Node a, Node b, Node, Node) { return g.sub(a, b); }},
      {"sub_bias", [](Graph& g, Node a, Node, Node v, Node) { return g.sub(a, v); }},
      {"mul", [](Graph& g, Node a, Node b, Node, Node) { return g.mul(a, b); }},
      {"mul_bias", [](Graph& g, Node a, Node, Node v, Node) { return g.mul(a, v); }},
      {"scale", [](Graph& g, Node a, Node, Node, Node) { return g.scale(a, -1.7); }},
      {"shift", [](Graph& g, Node a, Node, Node, Node) { return g.shift(a, 0.3); }},
      {"sigmoid", [](Graph& g, Node a, Node, Node, Node) { return g.sigmoid(a); }},
      {"tanh", [](Graph& g, Node a, Node, Node, Node) { return g.tanh(a); }},
      {"exp", [](Graph& g, Node a, Node, Node, Node) { return g.exp(a); }},
      {"log", [](Graph& g, Node a, Node, Node, Node) { return g.log(g.shift(g.square(a), 0.5)); }},
      {"log_sigmoid", [](Graph& g, Node a, Node, Node, Node) { return g.log_sigmoid(a); }},
      {"square", [](Graph& g, Node a, Node, Node, Node) { return g.square(a); }},
      {"clamp", [](Graph& g, Node a, Node, Node, Node) { return g.clamp(a, -10.0, 10.0); }},
      {"sum", [](Graph& g, Node a, Node, Node, Node) { return g.sum(a); }},
      {"sum_cols", [](Graph& g, Node a, Node, Node, Node) { return g.sum_cols(a); }},
      {"mean", [](Graph& g, Node a, Node, Node, Node) { return g.mean(a); }},
      {"concat", [](Graph& g, Node a, Node b, Node, Node) {
         const Node parts[] = {a, b};
         return g.concat(parts);
       }},
      {"logsumexp_cols", [](Graph& g, Node a, Node, Node, Node) { return g.logsumexp_cols(a); }},
  };
  for (const auto& [name, op] : ops) {
    const auto f = [&, &op = op](Graph& g, const ParamMap& p) {
      const Node a = g.parameter("a", p.at("a"));
      const Node b = g.parameter("b", p.at("b"));
      const Node v = g.parameter("v", p.at("v"));
      const Node m = g.parameter("m", p.at("m"));
      const Node out = op(g, a, b, v, m);
      const std::size_t n = shape_numel(g.shape(out));
      Tensor w({n});
      for (std::size_t i = 0; i < n; ++i) w[i] = weights[i % weights.size()];
      const Node flat = g.reshape(out, {n});
      const Node touch = g.scale(g.add(g.add(g.sum(a), g.sum(b)), g.add(g.sum(v), g.sum(m))), 0.0);
      return g.add(g.sum(g.mul(flat, g.constant(w))), touch);
    };
    tally.add(name, diff::finite_diff_check(f, params, 1e-5));
  }
}

void check_losses(Rng& rng, GradientTally& tally) {
  std::uniform_int_distribution<std::size_t> extent(2, 5);
  for (PriorKind kind : {PriorKind::StandardGaussian, PriorKind::VampPrior, PriorKind::ImplicitOptimal}) {
    Architecture a;
    a.data_dim = extent(rng);
    a.latent_dim = extent(rng);
    a.hidden = extent(rng) + 3;
    a.ratio_hidden = extent(rng) + 3;
    a.prior = {kind, kind == PriorKind::VampPrior ? extent(rng) : 0};
    const auto b = make_bundle(a, rng);
    const std::size_t batch = extent(rng), samples = extent(rng) - 1;
    Tensor x = uniform({batch, a.data_dim}, rng, 0.0, 1.0);
    for (double& v : x.data()) v = v > 0.5 ? 1.0 : 0.0;
    const Tensor eps = standard_normal({samples * batch, a.latent_dim}, rng);
    ParamMap trainable;
    for (const auto& n : train::vae_parameter_names(b)) trainable[n] = b.params.at(n);
    ModelBundle work = b;
    for (auto form : {klterm::KlForm::Analytic, klterm::KlForm::MonteCarlo}) {
      const auto f = [&](Graph& g, const ParamMap& p) {
        for (const auto& [name, t] : p) work.params.at(name) = t;
        return klterm::build_objective(g, work, x, eps, {.beta = 0.7, .kl_form = form}).objective;
      };
      tally.add("vae objective (" + to_string(kind) + ")", diff::finite_diff_check(f, trainable, 1e-5, 40));
    }
    if (kind != PriorKind::ImplicitOptimal) continue;

    ParamMap psi;
    for (const auto& n : b.ratio_names()) psi[n] = b.params.at(n);
    const Tensor z1 = uniform({batch, a.latent_dim}, rng, -3, 3);
    const Tensor z0 = standard_normal({batch, a.latent_dim}, rng);
    const std::uint64_t mask_seed = rng();
    for (auto mode : {nn::Mode::Train, nn::Mode::Eval}) {
      const auto f = [&](Graph& g, const ParamMap& p) {
        for (const auto& [name, t] : p) work.params.at(name) = t;
        Rng masks(mask_seed);
        return klterm::ratio_loss(nn::ParamScope(g, work.params), a, z1, z0, mode, &masks);
      };
      tally.add(std::string("ratio loss (") + (mode == nn::Mode::Train ? "train" : "eval") + ")",
                diff::finite_diff_check(f, psi, 1e-5, 40));
    }
  }
}

Outcome criterion_gradients(const Context&) {
  GradientTally tally;
  constexpr int kConfigurations = 20;
  for (int c = 0; c < kConfigurations; ++c) {
    Rng rng(600 + c);
    check_primitives(rng, tally);
    check_losses(rng, tally);
  }
  return {tally.worst < 1e-4, strf("%zu checks over %d random configurations; worst relative error %.2e (%s)",
                                   tally.checks, kConfigurations, tally.worst, tally.worst_name.c_str())};
}

// --- 7: evaluation oracle -------------------------------------------------------------

ModelBundle toy_model(PriorKind kind, std::uint64_t seed, std::size_t latent) {
  Architecture a;
  a.data_dim = 4;
  a.latent_dim = latent;
  a.hidden = 8;
  a.ratio_hidden = 8;
  a.prior = {kind, kind == PriorKind::VampPrior ? std::size_t{3} : std::size_t{0}};
  Rng rng(seed);
  const Tensor train = Tensor::matrix({{1, 0, 1, 0}, {0, 1, 1, 0}, {0, 0, 0, 1}});
  auto b = make_bundle(a, rng, &train);
  // A decoder that reacts strongly to z keeps the posterior mismatch visible.
  for (const auto& name : b.decoder_names()) {
    for (auto& v : b.params.at(name).data()) v *= 3.0;
  }
  return b;
}

// log of the integral of p(x|z) p(z) over a 1-D latent, by the trapezoid rule.
double quadrature_log_px(const ModelBundle& b, std::span<const double> x) {
  const double lo = -12.0, hi = 12.0;
  const std::size_t n = 24001;
  const double h = (hi - lo) / static_cast<double>(n - 1);
  Tensor z({n, 1});
  for (std::size_t i = 0; i < n; ++i) z[i] = lo + h * static_cast<double>(i);
  const Tensor mean = model::decode_mean(b, z);
  const Tensor vamp = b.arch.prior.kind == PriorKind::VampPrior ? model::vamp_log_prior(b, z) : Tensor();
  std::vector<double> terms(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto m = mean.row(i);
    const double log_prior =
        b.arch.prior.kind == PriorKind::VampPrior ? vamp[i] : -dist::kHalfLog2Pi - 0.5 * z[i] * z[i];
    terms[i] = dist::bernoulli_log_pmf(dist::BernoulliParams({m.begin(), m.end()}), x) + log_prior +
               std::log(i == 0 || i + 1 == n ? 0.5 * h : h);
  }
  return log_sum_exp(terms);
}

Outcome criterion_eval_oracle(const Context&) {
  const Tensor points = Tensor::matrix({{1, 0, 1, 0}, {0, 1, 1, 0}, {0, 0, 0, 1}, {1, 1, 1, 1}, {0, 0, 0, 0}});
  double worst = 0.0;
  std::size_t compared = 0;
  for (PriorKind kind : {PriorKind::StandardGaussian, PriorKind::VampPrior}) {
    for (std::uint64_t seed : {71, 72, 73}) {
      const auto b = toy_model(kind, seed, 1);
      Rng rng(seed);
      const auto is = eval::is_log_likelihood(b, points, 10000, rng);
      for (std::size_t i = 0; i < points.rows(); ++i) {
        worst = std::max(worst, std::abs(is[i] - quadrature_log_px(b, points.row(i))));
        ++compared;
      }
    }
  }

  // Paired sign tests of S=10 against S=1 and S=100 against S=10, each point's
  // estimate averaged over replicates.
  const auto b = toy_model(PriorKind::StandardGaussian, 74, 2);
  Rng rng(74);
  const std::size_t n = 100;
  Tensor x({n, 4});
  std::bernoulli_distribution coin(0.5);
  for (auto& v : x.data()) v = coin(rng) ? 1.0 : 0.0;
  const auto estimate = [&](std::size_t s) {
    std::vector<double> avg(n, 0.0);
    for (int r = 0; r < 20; ++r) {
      const auto v = eval::is_log_likelihood(b, x, s, rng);
      for (std::size_t i = 0; i < n; ++i) avg[i] += v[i] / 20.0;
    }
    return avg;
  };
  const auto s1 = estimate(1), s10 = estimate(10), s100 = estimate(100);
  std::size_t up1 = 0, up10 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    up1 += s10[i] > s1[i];
    up10 += s100[i] > s10[i];
  }
  const double p1 = sign_test_p(up1, n), p10 = sign_test_p(up10, n);
  return {worst < 0.05 && p1 < 0.01 && p10 < 0.01,
          strf("max |IS(S=1e4) - quadrature| = %.4f over %zu points; sign tests %zu/100 (p=%.1e), %zu/100 (p=%.1e)",
               worst, compared, up1, p1, up10, p10)};
}

// --- 8: score residual ----------------------------------------------------------------

Outcome criterion_score_residual(const Context& ctx) {
  const auto config = RunConfig::from_json(R"({"prior": "implicit"})");
  const auto d = data::load_dataset("onehot", ctx.data_root, config.data_seed);
  Rng rng(8);
  const auto b = make_bundle(config.architecture(d), rng);
  const Tensor points = Tensor::matrix({{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}});
  const auto big = klterm::score_gradient_residual(b, points, 100000, rng);
  std::size_t outside = 0;
  for (std::size_t j = 0; j < big.mean_grad.size(); ++j) outside += std::abs(big.mean_grad[j]) > 3.0 * big.coord_se[j];

  // Slope of log RMS |residual| against log n; the squared norm of a zero-mean
  // average falls exactly as 1/n.
  std::vector<double> lx, ly;
  for (const auto& [n, reps] : {std::pair<std::size_t, int>{1000, 40}, {10000, 20}, {100000, 5}}) {
    double sq = 0.0;
    for (int r = 0; r < reps; ++r) sq += std::pow(klterm::score_gradient_residual(b, points, n, rng).norm, 2) / reps;
    lx.push_back(std::log(static_cast<double>(n)));
    ly.push_back(0.5 * std::log(sq));
  }
  const double mx = mean_of(lx), my = mean_of(ly);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxy += (lx[i] - mx) * (ly[i] - my);
    sxx += (lx[i] - mx) * (lx[i] - mx);
  }
  const double slope = sxy / sxx;
  const bool pass = big.norm < 3.0 * big.standard_error && std::abs(slope + 0.5) < 0.1;
  return {pass, strf("|mean gradient| = %.3e vs SE %.3e at 1e5 samples (%zu of %zu coordinates beyond 3 SE); "
                     "log-log slope %.3f",
                     big.norm, big.standard_error, outside, big.mean_grad.size(), slope)};
}

// --- 9: MNIST subset --------------------------------------------------------------------

Outcome criterion_mnist(const Context& ctx) {
  const CpuTimer timer;
  data::Dataset d;
  try {
    d = data::load_dataset("mnist-subset", ctx.data_root, 0);
  } catch (const std::exception& e) {
    return {false, std::string("dataset unavailable: ") + e.what()};
  }
  const auto check = data::manifest_check(d, "mnist-subset");
  if (!check.ok) return {false, "dataset does not match its manifest: " + check.problems.front()};

  std::map<std::string, std::vector<double>> ll;
  for (const char* prior : {"standard", "implicit"}) {
    const auto config =
        RunConfig::from_json(json{{"dataset", "mnist-subset"}, {"prior", prior}, {"max_epochs", 100}}.dump());
    const auto arch = config.architecture(d);
    for (std::uint64_t seed : {1, 2, 3}) {
      const auto result = train::train(arch, config.train_config(d, seed), d);
      const Tensor x = train::evaluation_inputs(d, d.test, seed);
      const auto report = eval::evaluate(result.best, x, config.is_samples, seed);
      ll[prior].push_back(report.is_log_likelihood);
      std::cerr << strf("  mnist-subset %-8s seed %llu: best valid ELBO %.3f, test IS log-likelihood %.3f (%.0f CPU s)",
                        prior, static_cast<unsigned long long>(seed), result.state.best_valid_elbo,
                        report.is_log_likelihood, timer.seconds())
                << '\n';
    }
  }
  const double implicit = mean_of(ll["implicit"]), standard = mean_of(ll["standard"]);
  const double hours = timer.seconds() / 3600.0;
  return {implicit > standard && hours < 2.0,
          strf("test IS log-likelihood (S=10) over 3 seeds: implicit %.3f, standard %.3f; %.2f CPU h", implicit,
               standard, hours)};
}

// --- 10: determinism ------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome criterion_determinism(const Context& ctx) {
  const fs::path dir = fs::temp_directory_path() / strf("ipvae-acceptance-%d", static_cast<int>(::getpid()));
  fs::create_directories(dir);
  std::size_t identical = 0, runs = 0;
  std::string differing;
  for (const char* prior : {"standard", "vamp", "implicit"}) {
    const auto config = RunConfig::from_json(
        json{{"prior", prior}, {"max_epochs", 4}, {"warmup_epochs", 2}}.dump());
    const auto d = data::load_dataset("onehot", ctx.data_root, config.data_seed);
    std::vector<std::string> logs;
    for (int rep = 0; rep < 2; ++rep) {
      train::TrainHooks hooks;
      hooks.log_csv = dir / strf("%s-%d.csv", prior, rep);
      train::train(config.architecture(d), config.train_config(d, 10), d, hooks);
      logs.push_back(slurp(*hooks.log_csv));
    }
    ++runs;
    if (logs[0] == logs[1] && !logs[0].empty()) {
      ++identical;
    } else {
      differing += std::string(" ") + prior;
    }
  }
  fs::remove_all(dir);
  return {identical == runs, strf("%zu of %zu priors gave bit-identical training logs on a repeated run%s", identical,
                                  runs, differing.empty() ? "" : (";differs:" + differing).c_str())};
}

struct Criterion {
  int id;
  const char* name;
  Outcome (*run)(const Context&);
};

const Criterion kCriteria[] = {
    {1, "onehot-elbo", criterion_onehot},
    {2, "latent-clusters", criterion_latents},
    {3, "density-ratio", criterion_ratio},
    {4, "single-point-kl", criterion_single_point},
    {5, "five-point-kl", criterion_five_points},
    {6, "gradient-suite", criterion_gradients},
    {7, "evaluation-oracle", criterion_eval_oracle},
    {8, "score-residual", criterion_score_residual},
    {9, "mnist-subset", criterion_mnist},
    {10, "determinism", criterion_determinism},
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks; prints one PASS/FAIL line per criterion"};
  std::vector<int> selected, allowed;
  std::string data_root;
  app.add_option("criteria", selected, "Criterion numbers to run (default: all)")->check(CLI::Range(1, 10));
  app.add_option("--allow-fail", allowed, "Criteria whose FAIL does not affect the exit code")
      ->check(CLI::Range(1, 10));
  app.add_option("--data-root", data_root, "Dataset root (default: $IPVAE_DATA_ROOT, then data)");
  CLI11_PARSE(app, argc, argv);

  Context ctx;
  RunConfig rc;
  rc.data_root = data_root;
  ctx.data_root = rc.resolved_data_root();

  bool all_pass = true;
  for (const auto& c : kCriteria) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), c.id) == selected.end()) continue;
    Outcome o;
    try {
      o = c.run(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const bool tolerated = std::find(allowed.begin(), allowed.end(), c.id) != allowed.end();
    all_pass = all_pass && (o.pass || tolerated);
    std::cout << (o.pass ? "PASS" : "FAIL") << ' ' << c.id << ' ' << c.name << ": " << o.detail;
    if (tolerated) std::cout << (o.pass ? " [listed in --allow-fail]" : " [allowed to fail]");
    std::cout << std::endl;
  }
  return all_pass ? 0 : 1;
}
