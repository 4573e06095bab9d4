#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ipvae/data.hpp"
#include "ipvae/model.hpp"
#include "ipvae/nn.hpp"

namespace ipvae::train {

/// How J1 and J2 are counted. Epoch: J1 VAE epochs, then J2 ratio-net epochs
/// over cached encoder outputs. Step: J1 VAE minibatch steps, then J2 ratio
/// minibatch steps, repeated through every epoch.
enum class Schedule { Epoch, Step };

std::string to_string(Schedule s);
Schedule parse_schedule(std::string_view s);

struct TrainConfig {
  std::size_t batch_size = 100;
  double lr = 3e-4;
  double ratio_lr = 3e-4;
  std::size_t samples = 1;  // L, reparameterization samples per point
  Schedule schedule = Schedule::Epoch;
  std::size_t j1 = 1;
  std::size_t j2 = 10;
  std::size_t warmup_epochs = 100;
  std::size_t max_epochs = 1000;
  std::size_t patience = 50;  // 0 disables early stopping
  std::uint64_t seed = 1;
  bool dynamic_binarization = false;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

struct EpochLog {
  std::size_t epoch = 0;
  double beta = 0.0;
  double train_elbo = 0.0;
  double valid_elbo = 0.0;
  double kl_closed = 0.0;   // mean closed-form KL part over training batches
  double ratio_part = 0.0;  // mean T over training batches (implicit prior)
  double ratio_loss = 0.0;  // mean classifier objective over the last ratio-net pass
};

struct TrainState {
  std::size_t epoch = 0;
  double best_valid_elbo = -std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::size_t since_improvement = 0;
  Rng rng;
  std::vector<EpochLog> log;
};

/// Training failure (NaN loss or gradient). Carries the log up to the failure.
class TrainError : public std::runtime_error {
 public:
  TrainError(const std::string& what, std::vector<EpochLog> partial_log);
  const std::vector<EpochLog>& log() const { return log_; }

 private:
  std::vector<EpochLog> log_;
};

struct StepStats {
  double objective = 0.0;
  double elbo = 0.0;
  double kl_closed = 0.0;
  double ratio_part = 0.0;
};

/// Parameter names updated by the VAE step: encoder, decoder and pseudo-inputs.
std::vector<std::string> vae_parameter_names(const ModelBundle& bundle);

/// One Adam ascent step on the beta-weighted objective over theta, phi (and lambda).
/// `eps` holds L * B standard-normal rows. The ratio net is frozen.
StepStats vae_step(ModelBundle& bundle, nn::Adam& adam, const Tensor& batch, const Tensor& eps, double beta,
                   std::size_t batch_index = 0);

/// One Adam ascent step on the classifier objective over psi, dropout active.
/// Returns the objective before the update.
double ratio_step(ModelBundle& bundle, nn::Adam& adam, const Tensor& z_agg, const Tensor& z_prior, Rng& rng);

/// Bernoulli(intensity) per pixel. Throws std::invalid_argument on values outside [0, 1].
Tensor dynamic_binarize(const Tensor& intensities, Rng& rng);

/// Inputs a trained model is scored on: the split itself, or one fixed
/// binarization drawn from `seed` when the dataset trains with dynamic
/// binarization.
Tensor evaluation_inputs(const data::Dataset& dataset, const data::Split& split, std::uint64_t seed);

/// min(1, epoch / warmup_epochs); 1 when warmup_epochs is 0.
double warmup_beta(std::size_t epoch, std::size_t warmup_epochs);

/// Mean validation ELBO used for model selection.
double validation_elbo(const ModelBundle& bundle, const Tensor& x, const Tensor& eps);

struct TrainHooks {
  std::optional<std::filesystem::path> log_csv;     // rewritten after every epoch
  std::optional<std::filesystem::path> checkpoint;  // written on each validation improvement
  std::string checkpoint_info = "{}";                // JSON object merged into the checkpoint info
  std::function<void(const EpochLog&, const ModelBundle&)> on_epoch;  // current, not best, parameters
};

struct TrainResult {
  ModelBundle best;  // parameters with the best validation ELBO
  TrainState state;
  bool early_stopped = false;
};

TrainResult train(const Architecture& arch, const TrainConfig& config, const data::Dataset& dataset,
                  const TrainHooks& hooks = {});

/// CSV header and rows of the training log, doubles at full precision.
std::string log_csv_header();
std::string log_csv_row(const EpochLog& row);

}  // namespace ipvae::train
