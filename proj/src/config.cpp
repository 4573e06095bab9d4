#include "ipvae/config.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstdlib>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

namespace ipvae {

using nlohmann::json;

namespace {

template <typename T>
T field(const json& j, const char* key, const T& fallback) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config field '") + key + "' has the wrong type (" + it->type_name() + ")");
  }
}

std::size_t count_field(const json& j, const char* key, std::size_t fallback) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  if (!it->is_number_unsigned()) {
    throw ConfigError(std::string("config field '") + key + "' must be a non-negative integer");
  }
  return it->get<std::size_t>();
}

template <typename Parse>
auto enum_field(const json& j, const char* key, Parse parse, decltype(parse("")) fallback) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  if (!it->is_string()) throw ConfigError(std::string("config field '") + key + "' must be a string");
  try {
    return parse(it->get<std::string>());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config field '") + key + "': " + e.what());
  }
}

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "dataset",       "data_root",     "out_dir",        "data_seed",     "seeds",
      "onehot_valid_from_train",        "prior",          "k_mix",         "latent_dim",
      "hidden",        "ratio_hidden",  "ratio_keep",     "clip_pseudo_inputs",
      "dynamic_binarization",           "batch_size",     "lr",            "ratio_lr",
      "samples",       "schedule",      "j1",             "j2",            "warmup_epochs",
      "max_epochs",    "patience",      "is_samples"};
  return keys;
}

}  // namespace

RunConfig RunConfig::from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (!known_keys().contains(key)) throw ConfigError("unknown config field '" + key + "'");
  }
  RunConfig c;
  c.dataset = field<std::string>(j, "dataset", c.dataset);
  c.data_root = field<std::string>(j, "data_root", c.data_root);
  c.out_dir = field<std::string>(j, "out_dir", c.out_dir);
  c.data_seed = count_field(j, "data_seed", c.data_seed);
  if (j.contains("seeds")) {
    const auto& s = j["seeds"];
    if (!s.is_array() || s.empty()) throw ConfigError("config field 'seeds' must be a non-empty array");
    c.seeds.clear();
    for (const auto& v : s) {
      if (!v.is_number_unsigned()) throw ConfigError("config field 'seeds' must hold non-negative integers");
      c.seeds.push_back(v.get<std::uint64_t>());
    }
  }
  c.onehot_valid_from_train = field<bool>(j, "onehot_valid_from_train", c.onehot_valid_from_train);
  c.prior = enum_field(j, "prior", parse_prior, c.prior);
  c.k_mix = count_field(j, "k_mix", c.k_mix);
  if (j.contains("latent_dim")) c.latent_dim = count_field(j, "latent_dim", 0);
  c.hidden = count_field(j, "hidden", c.hidden);
  c.ratio_hidden = count_field(j, "ratio_hidden", c.ratio_hidden);
  c.ratio_keep = field<double>(j, "ratio_keep", c.ratio_keep);
  if (j.contains("clip_pseudo_inputs")) c.clip_pseudo_inputs = field<bool>(j, "clip_pseudo_inputs", false);
  if (j.contains("dynamic_binarization")) c.dynamic_binarization = field<bool>(j, "dynamic_binarization", false);
  auto& t = c.train;
  t.batch_size = count_field(j, "batch_size", t.batch_size);
  t.lr = field<double>(j, "lr", t.lr);
  t.ratio_lr = field<double>(j, "ratio_lr", t.ratio_lr);
  t.samples = count_field(j, "samples", t.samples);
  t.schedule = enum_field(j, "schedule", train::parse_schedule, t.schedule);
  t.j1 = count_field(j, "j1", t.j1);
  t.j2 = count_field(j, "j2", t.j2);
  t.warmup_epochs = count_field(j, "warmup_epochs", t.warmup_epochs);
  t.max_epochs = count_field(j, "max_epochs", t.max_epochs);
  t.patience = count_field(j, "patience", t.patience);
  c.is_samples = count_field(j, "is_samples", c.is_samples);
  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid training settings: ") + e.what());
  }
  if (c.is_samples == 0) throw ConfigError("config field 'is_samples' must be >= 1");
  if (c.prior == PriorKind::VampPrior && c.k_mix == 0) throw ConfigError("config field 'k_mix' must be >= 1");
  if (!(c.ratio_keep > 0.0 && c.ratio_keep <= 1.0)) throw ConfigError("config field 'ratio_keep' must be in (0, 1]");
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

std::string RunConfig::to_json() const {
  json j = {{"dataset", dataset},
            {"data_root", data_root},
            {"out_dir", out_dir},
            {"data_seed", data_seed},
            {"seeds", seeds},
            {"onehot_valid_from_train", onehot_valid_from_train},
            {"prior", to_string(prior)},
            {"k_mix", k_mix},
            {"hidden", hidden},
            {"ratio_hidden", ratio_hidden},
            {"ratio_keep", ratio_keep},
            {"batch_size", train.batch_size},
            {"lr", train.lr},
            {"ratio_lr", train.ratio_lr},
            {"samples", train.samples},
            {"schedule", train::to_string(train.schedule)},
            {"j1", train.j1},
            {"j2", train.j2},
            {"warmup_epochs", train.warmup_epochs},
            {"max_epochs", train.max_epochs},
            {"patience", train.patience},
            {"is_samples", is_samples}};
  if (latent_dim) j["latent_dim"] = *latent_dim;
  if (clip_pseudo_inputs) j["clip_pseudo_inputs"] = *clip_pseudo_inputs;
  if (dynamic_binarization) j["dynamic_binarization"] = *dynamic_binarization;
  return j.dump(2);
}

std::string RunConfig::resolved_data_root() const {
  if (!data_root.empty()) return data_root;
  if (const char* env = std::getenv(kDataRootEnv); env && *env) return env;
  return "data";
}

Architecture RunConfig::architecture(const data::Dataset& dataset) const {
  const auto* m = data::find_manifest(dataset.name);
  Architecture a;
  a.data_dim = dataset.dim;
  a.latent_dim = latent_dim.value_or(m ? m->latent_dim : 40);
  a.hidden = hidden;
  a.ratio_hidden = ratio_hidden;
  a.likelihood = dataset.likelihood;
  a.prior = {prior, prior == PriorKind::VampPrior ? k_mix : 0};
  a.clip_pseudo_inputs = clip_pseudo_inputs.value_or(dataset.name != "onehot");
  a.ratio_keep = ratio_keep;
  a.validate();
  return a;
}

train::TrainConfig RunConfig::train_config(const data::Dataset& dataset, std::uint64_t seed) const {
  auto t = train;
  t.seed = seed;
  t.dynamic_binarization = dynamic_binarization.value_or(dataset.binarize);
  return t;
}

std::string git_blob_sha1(std::string_view content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, header.data(), header.size()) != 1 ||
      EVP_DigestUpdate(ctx, content.data(), content.size()) != 1 || EVP_DigestFinal_ex(ctx, digest, &len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw std::runtime_error("SHA-1 computation failed");
  }
  EVP_MD_CTX_free(ctx);
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xf];
  }
  return out;
}

std::string run_input_hash(const RunConfig& config, const data::Dataset& dataset) {
  RunConfig located = config;
  located.out_dir.clear();
  located.data_root.clear();
  std::string content = located.to_json();
  for (const auto* s : {&dataset.train, &dataset.valid, &dataset.test}) {
    for (double v : s->x.data()) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int k = 0; k < 8; ++k) content += static_cast<char>(bits >> (8 * k));
    }
  }
  return git_blob_sha1(content);
}

}  // namespace ipvae
