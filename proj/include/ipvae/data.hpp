#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ipvae/model.hpp"
#include "ipvae/tensor.hpp"

namespace ipvae::data {

/// Malformed or unreadable data file. `offset()` is the byte position of the
/// problem when one applies.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what, std::optional<std::uint64_t> offset = std::nullopt);
  std::optional<std::uint64_t> offset() const { return offset_; }

 private:
  std::optional<std::uint64_t> offset_;
};

struct Split {
  Tensor x;                 // [n, D], values in [0, 1]
  std::vector<int> labels;  // empty when unlabeled
  std::size_t size() const { return x.rank() == 2 ? x.rows() : 0; }
};

struct Dataset {
  std::string name;
  std::size_t dim = 0;
  Likelihood likelihood = Likelihood::Bernoulli;
  bool binarize = false;  // dynamic binarization during training
  Split train, valid, test;
};

/// Uniform draws over the four one-hot vectors of length 4, sized
/// 1,000 / 100 / 1,000. With `valid_from_train` the validation points are the
/// first 100 training points; otherwise they are fresh draws.
Dataset generate_onehot(Rng& rng, bool valid_from_train = true);

/// Raw IDX array of unsigned bytes.
struct IdxArray {
  std::vector<std::size_t> dims;
  std::vector<std::uint8_t> bytes;
};

IdxArray read_idx(std::istream& in);
void write_idx(std::ostream& out, const IdxArray& a);

/// Images as [n, rows * cols] scaled to [0, 1] by /255. A header-only file gives
/// an empty [0, rows * cols] matrix.
Tensor load_idx(const std::filesystem::path& path);
std::vector<int> load_idx_labels(const std::filesystem::path& path);
/// Writes [n, D] values in [0, 1] as a 3-D IDX file (n x 1 x D) with bytes round(255 v).
void write_idx(const std::filesystem::path& path, const Tensor& x);
void write_idx_labels(const std::filesystem::path& path, const std::vector<int>& labels);

/// CSV of D real columns in [0, 1], plus an optional trailing integer label column.
Split load_csv(const std::filesystem::path& path, std::size_t dim);

/// Seeded shuffle of `rows` indices cut into consecutive groups of `sizes`.
std::vector<std::vector<std::size_t>> split_indices(std::size_t rows, const std::vector<std::size_t>& sizes,
                                                    Rng& rng);
std::vector<Split> split(const Split& source, const std::vector<std::size_t>& sizes, Rng& rng);

struct Manifest {
  std::string name;
  std::size_t dim = 0;
  std::size_t train = 0;
  std::size_t valid = 0;
  std::size_t test = 0;
  Likelihood likelihood = Likelihood::Bernoulli;
  bool binarize = false;
  std::size_t latent_dim = 40;
};

const std::vector<Manifest>& builtin_manifests();
const Manifest* find_manifest(std::string_view name);

struct ManifestReport {
  bool ok = true;
  std::vector<std::string> problems;
};

/// Compares dims and split sizes against the manifest named `expected`.
ManifestReport manifest_check(const Dataset& dataset, std::string_view expected);

/// Resolves a dataset by name. "onehot" is synthesized from `seed`; the others
/// are read from `root / name`: either MNIST-style IDX files
/// (train-images-idx3-ubyte, train-labels-idx1-ubyte, t10k-images-idx3-ubyte,
/// t10k-labels-idx1-ubyte; the train file is split into train/valid by a
/// seeded shuffle) or train.csv / valid.csv / test.csv.
Dataset load_dataset(std::string_view name, const std::filesystem::path& root, std::uint64_t seed,
                     bool onehot_valid_from_train = true);

}  // namespace ipvae::data
