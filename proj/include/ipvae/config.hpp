#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ipvae/data.hpp"
#include "ipvae/model.hpp"
#include "ipvae/trainer.hpp"

namespace ipvae {

/// Invalid configuration; the message names the offending field.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything needed to reproduce a training run. Stored as JSON; every key
/// is optional and unknown keys are rejected.
struct RunConfig {
  std::string dataset = "onehot";
  std::string data_root;            // empty: $IPVAE_DATA_ROOT, then "data"
  std::string out_dir = "runs";
  std::uint64_t data_seed = 0;      // dataset synthesis and train/valid shuffle
  std::vector<std::uint64_t> seeds = {1};
  bool onehot_valid_from_train = true;

  PriorKind prior = PriorKind::ImplicitOptimal;
  std::size_t k_mix = 50;
  std::optional<std::size_t> latent_dim;  // default from the dataset manifest
  std::size_t hidden = 500;
  std::size_t ratio_hidden = 500;
  double ratio_keep = 0.5;
  std::optional<bool> clip_pseudo_inputs;    // default: true for image data
  std::optional<bool> dynamic_binarization;  // default from the dataset manifest

  train::TrainConfig train;
  std::size_t is_samples = 10;

  static RunConfig from_json(std::string_view text);
  static RunConfig load(const std::string& path);
  std::string to_json() const;

  /// Data root after applying the environment fallback.
  std::string resolved_data_root() const;
  /// Architecture for `dataset` with the manifest defaults filled in.
  Architecture architecture(const data::Dataset& dataset) const;
  /// TrainConfig for one seed with the manifest defaults filled in.
  train::TrainConfig train_config(const data::Dataset& dataset, std::uint64_t seed) const;
};

/// Environment variable naming the dataset root directory.
inline constexpr const char* kDataRootEnv = "IPVAE_DATA_ROOT";

/// Git-style blob hash: SHA-1 of "blob <size>\0" followed by the content, hex encoded.
std::string git_blob_sha1(std::string_view content);

/// Hash of the config (without its output and data locations) and every
/// value of the dataset splits.
std::string run_input_hash(const RunConfig& config, const data::Dataset& dataset);

}  // namespace ipvae
