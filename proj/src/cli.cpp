#include "ipvae/cli.hpp"

#include <glob.h>

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "ipvae/checkpoint.hpp"
#include "ipvae/config.hpp"
#include "ipvae/data.hpp"
#include "ipvae/eval.hpp"
#include "ipvae/trainer.hpp"

namespace ipvae::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Usage-level failure: bad flags, bad config, missing inputs.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataOptions {
  std::string dataset;
  std::string data_root;
  std::optional<std::uint64_t> data_seed;
  std::string split = "test";
};

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string data_root_or_env(const std::string& root) {
  RunConfig c;
  c.data_root = root;
  return c.resolved_data_root();
}

data::Dataset open_dataset(const std::string& name, const std::string& root, std::uint64_t seed,
                           bool onehot_valid_from_train = true) {
  if (name != "onehot") {
    if (!data::find_manifest(name)) throw UsageError("unknown dataset '" + name + "'");
    const fs::path dir = fs::path(root) / name;
    if (!fs::is_directory(dir)) throw UsageError("dataset directory '" + dir.string() + "' does not exist");
  }
  return data::load_dataset(name, root, seed, onehot_valid_from_train);
}

const data::Split& pick_split(const data::Dataset& d, const std::string& split) {
  if (split == "train") return d.train;
  if (split == "valid") return d.valid;
  if (split == "test") return d.test;
  throw UsageError("unknown split '" + split + "' (expected train, valid or test)");
}

struct LoadedModel {
  ModelBundle bundle;
  json info;
};

LoadedModel load_model(const std::string& path) {
  if (!fs::exists(path)) throw UsageError("checkpoint '" + path + "' does not exist");
  const auto ckpt = load_checkpoint(path);
  LoadedModel m{bundle_from_checkpoint(ckpt), json::object()};
  const auto meta = json::parse(ckpt.metadata, nullptr, false);
  if (meta.is_object() && meta.contains("info")) m.info = meta["info"];
  return m;
}

data::Dataset dataset_for(const LoadedModel& m, const DataOptions& opt) {
  std::string name = opt.dataset;
  if (name.empty()) name = m.info.value("dataset", std::string());
  if (name.empty()) throw UsageError("--dataset is required (the checkpoint does not record one)");
  const std::uint64_t seed = opt.data_seed.value_or(m.info.value("data_seed", std::uint64_t{0}));
  const bool from_train = m.info.value("onehot_valid_from_train", true);
  auto d = open_dataset(name, data_root_or_env(opt.data_root), seed, from_train);
  if (d.dim != m.bundle.arch.data_dim) {
    throw std::runtime_error("checkpoint expects data dimension " + std::to_string(m.bundle.arch.data_dim) +
                             " but dataset '" + name + "' has " + std::to_string(d.dim));
  }
  return d;
}

void add_data_options(CLI::App* cmd, DataOptions& opt) {
  cmd->add_option("--dataset", opt.dataset, "Dataset name (default: recorded in the checkpoint)");
  cmd->add_option("--data-root", opt.data_root, std::string("Dataset root (default: $") + kDataRootEnv + " or ./data)");
  cmd->add_option("--data-seed", opt.data_seed, "Seed of the dataset split (default: recorded in the checkpoint)");
  cmd->add_option("--split", opt.split, "train, valid or test")->capture_default_str();
}

// --- train -------------------------------------------------------------------

struct TrainOptions {
  std::string config_path;
  std::string manifest_path;
  json overrides = json::object();
};

int cmd_train(const TrainOptions& opt, std::ostream& out, std::ostream& err) {
  if (!opt.config_path.empty() && !opt.manifest_path.empty()) {
    throw UsageError("--config and --manifest are mutually exclusive");
  }
  json base = json::object();
  if (!opt.config_path.empty()) {
    base = json::parse(read_file(opt.config_path), nullptr, false);
    if (base.is_discarded()) throw ConfigError("config file '" + opt.config_path + "' is not valid JSON");
  } else if (!opt.manifest_path.empty()) {
    const auto manifest = json::parse(read_file(opt.manifest_path), nullptr, false);
    if (manifest.is_discarded() || !manifest.contains("config")) {
      throw ConfigError("'" + opt.manifest_path + "' is not a run manifest");
    }
    base = manifest["config"];
  }
  base.update(opt.overrides);
  const RunConfig config = RunConfig::from_json(base.dump());

  const auto dataset = open_dataset(config.dataset, config.resolved_data_root(), config.data_seed,
                                    config.onehot_valid_from_train);
  const auto arch = config.architecture(dataset);
  fs::create_directories(config.out_dir);

  for (const auto seed : config.seeds) {
    RunConfig single = config;
    single.seeds = {seed};
    const fs::path dir = fs::path(config.out_dir) / (config.dataset + "-" + to_string(config.prior) + "-seed" +
                                                     std::to_string(seed));
    fs::create_directories(dir);
    const json info = {{"dataset", config.dataset},
                       {"data_seed", config.data_seed},
                       {"onehot_valid_from_train", config.onehot_valid_from_train}};
    train::TrainHooks hooks;
    hooks.log_csv = dir / "train_log.csv";
    hooks.checkpoint = dir / "checkpoint.ckpt";
    hooks.checkpoint_info = info.dump();
    const auto result = train::train(arch, single.train_config(dataset, seed), dataset, hooks);

    json manifest = {{"config", json::parse(single.to_json())},
                     {"input_hash", run_input_hash(single, dataset)},
                     {"architecture", json::parse(arch.to_json())},
                     {"epochs_run", result.state.log.size()},
                     {"early_stopped", result.early_stopped}};
    if (!result.state.log.empty()) {
      manifest["best_epoch"] = result.state.best_epoch;
      manifest["best_valid_elbo"] = result.state.best_valid_elbo;
    }
    std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
    out << "seed " << seed << ": " << result.state.log.size() << " epochs";
    if (!result.state.log.empty()) out << ", best valid ELBO " << result.state.best_valid_elbo;
    out << " -> " << dir.string() << '\n';
  }
  (void)err;
  return kExitOk;
}

// --- eval --------------------------------------------------------------------

struct EvalOptions {
  std::string checkpoint;
  std::string glob_pattern;
  DataOptions data;
  std::size_t samples = 10;
  std::uint64_t seed = 1;
  std::string out_path;
};

std::vector<std::string> expand_glob(const std::string& pattern) {
  glob_t g{};
  std::vector<std::string> paths;
  if (::glob(pattern.c_str(), 0, nullptr, &g) == 0) {
    for (std::size_t i = 0; i < g.gl_pathc; ++i) paths.emplace_back(g.gl_pathv[i]);
  }
  globfree(&g);
  return paths;
}

int cmd_eval(const EvalOptions& opt, std::ostream& out) {
  if (opt.checkpoint.empty() == opt.glob_pattern.empty()) {
    throw UsageError("give exactly one of --checkpoint or --glob");
  }
  if (opt.samples == 0) throw UsageError("--samples must be >= 1");
  const auto paths = opt.glob_pattern.empty() ? std::vector<std::string>{opt.checkpoint} : expand_glob(opt.glob_pattern);
  if (paths.empty()) throw UsageError("no checkpoint matches '" + opt.glob_pattern + "'");

  std::vector<eval::EvalReport> reports;
  json per_run = json::array();
  for (const auto& path : paths) {
    const auto model = load_model(path);
    const auto dataset = dataset_for(model, opt.data);
    const Tensor x = train::evaluation_inputs(dataset, pick_split(dataset, opt.data.split), opt.seed);
    auto report = eval::evaluate(model.bundle, x, opt.samples, opt.seed);
    report.dataset = dataset.name;
    report.split = opt.data.split;
    auto j = json::parse(report.to_json());
    j["checkpoint"] = path;
    per_run.push_back(j);
    reports.push_back(std::move(report));
  }
  std::string text;
  if (opt.glob_pattern.empty()) {
    text = per_run[0].dump(2);
  } else {
    const auto summary = eval::aggregate_seeds(reports);
    json j = json::parse(summary.to_json());
    j["reports"] = per_run;
    text = j.dump(2);
  }
  if (!opt.out_path.empty()) {
    std::ofstream f(opt.out_path);
    if (!(f << text << '\n')) throw std::runtime_error("cannot write '" + opt.out_path + "'");
  }
  out << text << '\n';
  return kExitOk;
}

// --- export-latents ----------------------------------------------------------

struct ExportOptions {
  std::string checkpoint;
  DataOptions data;
  std::string out_path;
  std::uint64_t seed = 1;
};

int cmd_export(const ExportOptions& opt, std::ostream& out, std::ostream& err) {
  const auto model = load_model(opt.checkpoint);
  const auto dataset = dataset_for(model, opt.data);
  const auto& split = pick_split(dataset, opt.data.split);
  std::size_t columns = 0;
  if (model.bundle.arch.latent_dim != 2) {
    err << "warning: latent dimension is " << model.bundle.arch.latent_dim
        << "; exporting the first two coordinates\n";
    columns = 2;
  }
  std::ofstream f(opt.out_path);
  if (!f) throw std::runtime_error("cannot open '" + opt.out_path + "' for writing");
  Rng rng(opt.seed);
  const Tensor x = train::evaluation_inputs(dataset, split, opt.seed);
  const auto rows = eval::export_latents(model.bundle, x, split.labels, f, rng, columns);
  out << "wrote " << rows << " rows to " << opt.out_path << '\n';
  return kExitOk;
}

// --- check-data --------------------------------------------------------------

int cmd_check(const DataOptions& opt, std::ostream& out) {
  if (opt.dataset.empty()) throw UsageError("--dataset is required");
  const auto d = open_dataset(opt.dataset, data_root_or_env(opt.data_root), opt.data_seed.value_or(0));
  const auto report = data::manifest_check(d, opt.dataset);
  out << d.name << ": dim " << d.dim << ", train " << d.train.size() << ", valid " << d.valid.size() << ", test "
      << d.test.size() << '\n';
  for (const auto& p : report.problems) out << "  mismatch: " << p << '\n';
  out << (report.ok ? "ok" : "manifest mismatch") << '\n';
  return report.ok ? kExitOk : kExitFailure;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app("Variational autoencoder with an implicit optimal prior", "ipvae");
  app.require_subcommand(1);

  TrainOptions train_opt;
  auto* train_cmd = app.add_subcommand("train", "Train one model per seed");
  train_cmd->add_option("--config", train_opt.config_path, "JSON run configuration");
  train_cmd->add_option("--manifest", train_opt.manifest_path, "Re-run the configuration stored in a run manifest");
  // Flag overrides are collected as JSON so they pass the same validation as the file.
  std::map<std::string, std::string> str_flags;
  std::map<std::string, std::string> num_flags;
  std::map<std::string, std::string> bool_flags;
  std::string seed_list;
  const auto str_flag = [&](const std::string& flag, const std::string& key, const std::string& help) {
    train_cmd->add_option("--" + flag, str_flags[key], help);
  };
  const auto num_flag = [&](const std::string& flag, const std::string& key, const std::string& help) {
    train_cmd->add_option("--" + flag, num_flags[key], help)->check(CLI::Number);
  };
  str_flag("dataset", "dataset", "Dataset name");
  str_flag("data-root", "data_root", "Dataset root directory");
  str_flag("out", "out_dir", "Output directory");
  str_flag("prior", "prior", "standard, vamp or implicit");
  str_flag("schedule", "schedule", "epoch or step");
  num_flag("k-mix", "k_mix", "VampPrior pseudo-inputs");
  num_flag("seed", "seed", "Single training seed");
  num_flag("data-seed", "data_seed", "Dataset seed");
  num_flag("latent-dim", "latent_dim", "Latent dimension");
  num_flag("hidden", "hidden", "Hidden units of encoder and decoder");
  num_flag("ratio-hidden", "ratio_hidden", "Hidden units of the ratio net");
  num_flag("ratio-keep", "ratio_keep", "Dropout keep probability of the ratio net");
  num_flag("batch-size", "batch_size", "Minibatch size");
  num_flag("lr", "lr", "Adam learning rate for theta, phi, lambda");
  num_flag("ratio-lr", "ratio_lr", "Adam learning rate for psi");
  num_flag("samples", "samples", "Reparameterization samples L");
  num_flag("j1", "j1", "VAE epochs (or steps) per cycle");
  num_flag("j2", "j2", "Ratio-net epochs (or steps) per cycle");
  num_flag("warmup-epochs", "warmup_epochs", "Warm-up length");
  num_flag("max-epochs", "max_epochs", "Maximum epochs");
  num_flag("patience", "patience", "Early-stopping patience (0 disables)");
  num_flag("is-samples", "is_samples", "Importance samples for evaluation");
  train_cmd->add_option("--seeds", seed_list, "Comma-separated training seeds");
  train_cmd->add_option("--binarize", bool_flags["dynamic_binarization"], "Dynamic binarization (true/false)");
  train_cmd->add_option("--clip-pseudo", bool_flags["clip_pseudo_inputs"], "Clip pseudo-inputs to [0, 1] (true/false)");

  EvalOptions eval_opt;
  auto* eval_cmd = app.add_subcommand("eval", "ELBO and importance-sampled log-likelihood");
  eval_cmd->add_option("--checkpoint", eval_opt.checkpoint, "Checkpoint file");
  eval_cmd->add_option("--glob", eval_opt.glob_pattern, "Pattern of checkpoints to aggregate");
  add_data_options(eval_cmd, eval_opt.data);
  eval_cmd->add_option("-S,--samples", eval_opt.samples, "Importance samples")->capture_default_str();
  eval_cmd->add_option("--seed", eval_opt.seed, "Evaluation seed")->capture_default_str();
  eval_cmd->add_option("--out", eval_opt.out_path, "Write the JSON report here as well");

  ExportOptions export_opt;
  auto* export_cmd = app.add_subcommand("export-latents", "Write sampled latents as CSV");
  export_cmd->add_option("--checkpoint", export_opt.checkpoint, "Checkpoint file")->required();
  add_data_options(export_cmd, export_opt.data);
  export_cmd->add_option("--out", export_opt.out_path, "Output CSV")->required();
  export_cmd->add_option("--seed", export_opt.seed, "Sampling seed")->capture_default_str();

  DataOptions check_opt;
  check_opt.split.clear();
  auto* check_cmd = app.add_subcommand("check-data", "Compare a dataset against its built-in manifest");
  check_cmd->add_option("--dataset", check_opt.dataset, "Dataset name")->required();
  check_cmd->add_option("--data-root", check_opt.data_root, "Dataset root directory");
  check_cmd->add_option("--data-seed", check_opt.data_seed, "Dataset seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train_cmd) {
      for (const auto& [key, v] : str_flags) {
        if (!v.empty()) train_opt.overrides[key] = v;
      }
      for (const auto& [key, v] : num_flags) {
        if (v.empty()) continue;
        const auto parsed = json::parse(v, nullptr, false);
        if (parsed.is_discarded() || !parsed.is_number()) throw UsageError("--" + key + " expects a number");
        if (key == "seed") {
          train_opt.overrides["seeds"] = json::array({parsed});
        } else {
          train_opt.overrides[key] = parsed;
        }
      }
      for (const auto& [key, v] : bool_flags) {
        if (v.empty()) continue;
        if (v != "true" && v != "false") throw UsageError("boolean flags take true or false");
        train_opt.overrides[key] = v == "true";
      }
      if (!seed_list.empty()) {
        json seeds = json::array();
        std::stringstream ss(seed_list);
        for (std::string s; std::getline(ss, s, ',');) {
          const auto parsed = json::parse(s, nullptr, false);
          if (parsed.is_discarded() || !parsed.is_number_unsigned()) throw UsageError("bad seed '" + s + "'");
          seeds.push_back(parsed);
        }
        train_opt.overrides["seeds"] = seeds;
      }
      return cmd_train(train_opt, out, err);
    }
    if (*eval_cmd) return cmd_eval(eval_opt, out);
    if (*export_cmd) return cmd_export(export_opt, out, err);
    if (*check_cmd) return cmd_check(check_opt, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace ipvae::cli
