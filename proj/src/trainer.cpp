#include "ipvae/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>

#include "ipvae/checkpoint.hpp"
#include "ipvae/eval.hpp"
#include "ipvae/klterm.hpp"

namespace ipvae::train {

using diff::Graph;

namespace {

// Offset for the validation RNG stream so it never overlaps the training stream.
constexpr std::uint64_t kValidStream = 0x9e3779b97f4a7c15ULL;
// Offset for the fixed binarization of evaluation inputs.
constexpr std::uint64_t kEvalStream = 0xbf58476d1ce4e5b9ULL;

std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(perm[i - 1], perm[pick(rng)]);
  }
  return perm;
}

Tensor gather_posterior_samples(const GaussianBatch& post, std::span<const std::size_t> idx, Rng& rng) {
  const std::size_t d = post.mu.cols();
  Tensor eps = standard_normal({idx.size(), d}, rng);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      eps.at(r, c) = eps.at(r, c) * std::exp(0.5 * post.log_var.at(idx[r], c)) + post.mu.at(idx[r], c);
    }
  }
  return eps;
}

}  // namespace

std::string to_string(Schedule s) { return s == Schedule::Epoch ? "epoch" : "step"; }

Schedule parse_schedule(std::string_view s) {
  if (s == "epoch") return Schedule::Epoch;
  if (s == "step") return Schedule::Step;
  throw std::invalid_argument("unknown schedule '" + std::string(s) + "' (expected epoch or step)");
}

void TrainConfig::validate() const {
  const auto need = [](bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(msg);
  };
  need(batch_size >= 1, "batch_size must be >= 1");
  need(samples >= 1, "samples (L) must be >= 1");
  need(j1 >= 1, "j1 must be >= 1");
  need(j2 >= 1, "j2 must be >= 1");
  need(lr >= 0.0 && std::isfinite(lr), "lr must be a finite non-negative number");
  need(ratio_lr >= 0.0 && std::isfinite(ratio_lr), "ratio_lr must be a finite non-negative number");
  need(warmup_epochs <= max_epochs, "warmup_epochs must not exceed max_epochs");
}

TrainError::TrainError(const std::string& what, std::vector<EpochLog> partial_log)
    : std::runtime_error(what), log_(std::move(partial_log)) {}

std::vector<std::string> vae_parameter_names(const ModelBundle& bundle) {
  auto names = bundle.encoder_names();
  for (auto& n : bundle.decoder_names()) names.push_back(std::move(n));
  for (auto& n : bundle.pseudo_names()) names.push_back(std::move(n));
  return names;
}

StepStats vae_step(ModelBundle& bundle, nn::Adam& adam, const Tensor& batch, const Tensor& eps, double beta,
                   std::size_t batch_index) {
  StepStats stats;
  ParamMap grads;
  try {
    Graph g;
    const auto nodes = klterm::build_objective(g, bundle, batch, eps, {.beta = beta});
    stats.objective = g.value(nodes.objective).item();
    stats.elbo = g.value(nodes.elbo).item();
    stats.kl_closed = eval::mean(g.value(nodes.kl_closed).data());
    stats.ratio_part = eval::mean(g.value(nodes.ratio).data());
    grads = g.backward(g.scale(nodes.objective, -1.0));
  } catch (const diff::GraphError& e) {
    throw std::runtime_error("VAE step failed on batch " + std::to_string(batch_index) + ": " + e.what());
  }
  if (!std::isfinite(stats.objective)) {
    throw std::runtime_error("VAE step produced a non-finite loss on batch " + std::to_string(batch_index));
  }
  adam.step(bundle.params, grads);
  return stats;
}

double ratio_step(ModelBundle& bundle, nn::Adam& adam, const Tensor& z_agg, const Tensor& z_prior, Rng& rng) {
  Graph g;
  const auto loss = klterm::ratio_loss(nn::ParamScope(g, bundle.params), bundle.arch, z_agg, z_prior,
                                       nn::Mode::Train, &rng);
  const double value = g.value(loss).item();
  if (!std::isfinite(value)) throw std::runtime_error("ratio step produced a non-finite loss");
  adam.step(bundle.params, g.backward(g.scale(loss, -1.0)));
  return value;
}

Tensor dynamic_binarize(const Tensor& intensities, Rng& rng) {
  Tensor out(intensities.shape());
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const auto src = intensities.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (!(src[i] >= 0.0 && src[i] <= 1.0)) {
      throw std::invalid_argument("dynamic_binarize: intensity " + std::to_string(src[i]) + " at index " +
                                  std::to_string(i) + " outside [0, 1]");
    }
    dst[i] = uniform(rng) < src[i] ? 1.0 : 0.0;
  }
  return out;
}

Tensor evaluation_inputs(const data::Dataset& dataset, const data::Split& split, std::uint64_t seed) {
  if (!dataset.binarize) return split.x;
  Rng rng(seed ^ kEvalStream);
  return dynamic_binarize(split.x, rng);
}

double warmup_beta(std::size_t epoch, std::size_t warmup_epochs) {
  if (warmup_epochs == 0) return 1.0;
  return std::min(1.0, static_cast<double>(epoch) / static_cast<double>(warmup_epochs));
}

double validation_elbo(const ModelBundle& bundle, const Tensor& x, const Tensor& eps) {
  return eval::mean(eval::elbo(bundle, x, eps, klterm::KlForm::Analytic));
}

std::string log_csv_header() { return "epoch,beta,train_elbo,valid_elbo,kl_closed,ratio_part,ratio_loss"; }

std::string log_csv_row(const EpochLog& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", r.epoch, r.beta, r.train_elbo,
                r.valid_elbo, r.kl_closed, r.ratio_part, r.ratio_loss);
  return buf;
}

TrainResult train(const Architecture& arch, const TrainConfig& config, const data::Dataset& dataset,
                  const TrainHooks& hooks) {
  config.validate();
  arch.validate();
  if (dataset.train.size() == 0) throw std::invalid_argument("train: empty training split");
  if (dataset.valid.size() == 0) throw std::invalid_argument("train: empty validation split");
  if (dataset.train.x.cols() != arch.data_dim) {
    throw std::invalid_argument("train: data dimension " + std::to_string(dataset.train.x.cols()) +
                                " differs from architecture data_dim " + std::to_string(arch.data_dim));
  }

  TrainResult result;
  auto& state = result.state;
  state.rng.seed(config.seed);
  Rng valid_rng(config.seed ^ kValidStream);

  ModelBundle bundle = make_bundle(arch, state.rng, &dataset.train.x);
  result.best = bundle;
  const bool implicit = arch.prior.kind == PriorKind::ImplicitOptimal;
  nn::Adam vae_adam({.lr = config.lr}, vae_parameter_names(bundle));
  nn::Adam ratio_adam({.lr = config.ratio_lr}, bundle.ratio_names());

  const Tensor valid_x =
      config.dynamic_binarization ? dynamic_binarize(dataset.valid.x, valid_rng) : dataset.valid.x;
  const Tensor valid_eps = standard_normal({valid_x.rows(), arch.latent_dim}, valid_rng);

  std::ofstream log_out;
  if (hooks.log_csv) {
    log_out.open(*hooks.log_csv, std::ios::trunc);
    if (!log_out) throw std::runtime_error("cannot open training log '" + hooks.log_csv->string() + "'");
    log_out << log_csv_header() << '\n' << std::flush;
  }

  const std::size_t n = dataset.train.size();
  const std::size_t batch = std::min(config.batch_size, n);
  const std::size_t d = arch.latent_dim;

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    state.epoch = epoch;
    EpochLog row;
    row.epoch = epoch;
    row.beta = warmup_beta(epoch, config.warmup_epochs);
    try {
      const Tensor x_epoch =
          config.dynamic_binarization ? dynamic_binarize(dataset.train.x, state.rng) : dataset.train.x;
      double ratio_loss_sum = 0.0;
      std::size_t ratio_steps = 0;
      const auto ratio_update = [&](const Tensor& z_agg) {
        const Tensor z_prior = standard_normal({z_agg.rows(), d}, state.rng);
        ratio_loss_sum += ratio_step(bundle, ratio_adam, z_agg, z_prior, state.rng);
        ++ratio_steps;
      };

      const auto perm = permutation(n, state.rng);
      double elbo_sum = 0.0, kl_sum = 0.0, ratio_sum = 0.0;
      std::size_t vae_steps = 0;
      for (std::size_t begin = 0, b = 0; begin < n; begin += batch, ++b) {
        const std::size_t end = std::min(n, begin + batch);
        const std::span<const std::size_t> idx(perm.data() + begin, end - begin);
        const Tensor xb = x_epoch.gather_rows(idx);
        const Tensor eps = standard_normal({config.samples * xb.rows(), d}, state.rng);
        const auto stats = vae_step(bundle, vae_adam, xb, eps, row.beta, b);
        const double w = static_cast<double>(xb.rows());
        elbo_sum += w * stats.elbo;
        kl_sum += w * stats.kl_closed;
        ratio_sum += w * stats.ratio_part;
        ++vae_steps;
        if (implicit && config.schedule == Schedule::Step && vae_steps % config.j1 == 0) {
          std::uniform_int_distribution<std::size_t> pick(0, n - 1);
          for (std::size_t s = 0; s < config.j2; ++s) {
            std::vector<std::size_t> picked(batch);
            for (auto& i : picked) i = pick(state.rng);
            const auto post = model::encode(bundle, x_epoch.gather_rows(picked));
            std::vector<std::size_t> all(batch);
            std::iota(all.begin(), all.end(), std::size_t{0});
            ratio_update(gather_posterior_samples(post, all, state.rng));
          }
        }
      }
      row.train_elbo = elbo_sum / static_cast<double>(n);
      row.kl_closed = kl_sum / static_cast<double>(n);
      row.ratio_part = ratio_sum / static_cast<double>(n);

      if (implicit && config.schedule == Schedule::Epoch && (epoch + 1) % config.j1 == 0) {
        // phi is frozen for the whole ratio phase, so posteriors are encoded once.
        const auto post = model::encode(bundle, x_epoch);
        for (std::size_t pass = 0; pass < config.j2; ++pass) {
          ratio_loss_sum = 0.0;
          ratio_steps = 0;
          const auto order = permutation(n, state.rng);
          for (std::size_t begin = 0; begin < n; begin += batch) {
            const std::size_t end = std::min(n, begin + batch);
            ratio_update(gather_posterior_samples(post, {order.data() + begin, end - begin}, state.rng));
          }
        }
      }
      row.ratio_loss = ratio_steps ? ratio_loss_sum / static_cast<double>(ratio_steps) : 0.0;
      row.valid_elbo = validation_elbo(bundle, valid_x, valid_eps);
      if (!std::isfinite(row.valid_elbo)) throw std::runtime_error("validation ELBO is not finite");
    } catch (const std::exception& e) {
      throw TrainError("training diverged in epoch " + std::to_string(epoch) + ": " + e.what(), state.log);
    }

    state.log.push_back(row);
    if (log_out.is_open()) log_out << log_csv_row(row) << '\n' << std::flush;
    if (hooks.on_epoch) hooks.on_epoch(row, bundle);

    if (row.valid_elbo > state.best_valid_elbo) {
      state.best_valid_elbo = row.valid_elbo;
      state.best_epoch = epoch;
      state.since_improvement = 0;
      result.best = bundle;
      if (hooks.checkpoint) {
        auto info = nlohmann::json::parse(hooks.checkpoint_info);
        info.update({{"epoch", epoch}, {"valid_elbo", row.valid_elbo}, {"seed", config.seed}});
        save_checkpoint(*hooks.checkpoint, to_checkpoint(bundle, info.dump()));
      }
    } else {
      ++state.since_improvement;
    }
    if (config.patience > 0 && epoch + 1 >= config.warmup_epochs && state.since_improvement >= config.patience) {
      result.early_stopped = true;
      break;
    }
  }
  if (config.max_epochs == 0 && hooks.checkpoint) {
    auto info = nlohmann::json::parse(hooks.checkpoint_info);
    info.update({{"epoch", nullptr}, {"seed", config.seed}});
    save_checkpoint(*hooks.checkpoint, to_checkpoint(bundle, info.dump()));
  }
  return result;
}

}  // namespace ipvae::train
