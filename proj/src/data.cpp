#include "ipvae/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace ipvae::data {

DataError::DataError(const std::string& what, std::optional<std::uint64_t> offset)
    : std::runtime_error(offset ? what + " (byte offset " + std::to_string(*offset) + ")" : what),
      offset_(offset) {}

namespace {

constexpr std::uint8_t kUnsignedByte = 0x08;

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return in;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  return out;
}

std::uint8_t to_byte(double v) {
  if (!(v >= 0.0 && v <= 1.0)) throw DataError("value outside [0, 1] cannot be stored as IDX");
  return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

}  // namespace

Dataset generate_onehot(Rng& rng, bool valid_from_train) {
  std::uniform_int_distribution<int> pick(0, 3);
  const auto draw = [&](std::size_t n) {
    Split s{Tensor({n, 4}), {}};
    for (std::size_t r = 0; r < n; ++r) {
      const int k = pick(rng);
      s.x.at(r, static_cast<std::size_t>(k)) = 1.0;
      s.labels.push_back(k);
    }
    return s;
  };
  Dataset d{"onehot", 4, Likelihood::Bernoulli, false, draw(1000), {}, {}};
  if (valid_from_train) {
    d.valid.x = d.train.x.rows_slice(0, 100);
    d.valid.labels.assign(d.train.labels.begin(), d.train.labels.begin() + 100);
  } else {
    d.valid = draw(100);
  }
  d.test = draw(1000);
  return d;
}

IdxArray read_idx(std::istream& in) {
  std::uint8_t header[4];
  if (!in.read(reinterpret_cast<char*>(header), 4)) throw DataError("truncated IDX header", 0);
  if (header[0] != 0 || header[1] != 0) throw DataError("bad IDX magic", 0);
  if (header[2] != kUnsignedByte) throw DataError("unsupported IDX element type", 2);
  const std::size_t ndim = header[3];
  if (ndim == 0) throw DataError("IDX file declares zero dimensions", 3);
  IdxArray a;
  std::size_t count = 1;
  for (std::size_t k = 0; k < ndim; ++k) {
    std::uint8_t b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw DataError("truncated IDX dimensions", 4 + 4 * k);
    const std::size_t dim = (std::size_t{b[0]} << 24) | (std::size_t{b[1]} << 16) | (std::size_t{b[2]} << 8) | b[3];
    a.dims.push_back(dim);
    count *= dim;
  }
  const std::uint64_t data_offset = 4 + 4 * ndim;
  a.bytes.resize(count);
  if (count > 0) {
    in.read(reinterpret_cast<char*>(a.bytes.data()), static_cast<std::streamsize>(count));
    if (static_cast<std::size_t>(in.gcount()) != count) {
      throw DataError("truncated IDX data: expected " + std::to_string(count) + " bytes",
                      data_offset + static_cast<std::uint64_t>(in.gcount()));
    }
  }
  return a;
}

void write_idx(std::ostream& out, const IdxArray& a) {
  const std::size_t count =
      std::accumulate(a.dims.begin(), a.dims.end(), std::size_t{1}, std::multiplies<>());
  if (a.dims.empty() || a.dims.size() > 255 || count != a.bytes.size()) {
    throw DataError("IDX array dims do not match its data");
  }
  const char header[4] = {0, 0, static_cast<char>(kUnsignedByte), static_cast<char>(a.dims.size())};
  out.write(header, 4);
  for (auto d : a.dims) {
    const char b[4] = {static_cast<char>(d >> 24), static_cast<char>(d >> 16), static_cast<char>(d >> 8),
                       static_cast<char>(d)};
    out.write(b, 4);
  }
  out.write(reinterpret_cast<const char*>(a.bytes.data()), static_cast<std::streamsize>(a.bytes.size()));
  if (!out) throw DataError("failed writing IDX data");
}

Tensor load_idx(const std::filesystem::path& path) {
  auto in = open_in(path);
  const auto a = read_idx(in);
  const std::size_t n = a.dims[0];
  std::size_t d = 1;
  for (std::size_t k = 1; k < a.dims.size(); ++k) d *= a.dims[k];
  Tensor x({n, d});
  for (std::size_t i = 0; i < a.bytes.size(); ++i) x[i] = a.bytes[i] / 255.0;
  return x;
}

std::vector<int> load_idx_labels(const std::filesystem::path& path) {
  auto in = open_in(path);
  const auto a = read_idx(in);
  if (a.dims.size() != 1) throw DataError("label file '" + path.string() + "' is not one-dimensional", 3);
  return {a.bytes.begin(), a.bytes.end()};
}

void write_idx(const std::filesystem::path& path, const Tensor& x) {
  if (x.rank() != 2) throw DataError("write_idx expects a matrix");
  IdxArray a{{x.rows(), 1, x.cols()}, {}};
  a.bytes.reserve(x.size());
  for (double v : x.data()) a.bytes.push_back(to_byte(v));
  auto out = open_out(path);
  write_idx(out, a);
}

void write_idx_labels(const std::filesystem::path& path, const std::vector<int>& labels) {
  IdxArray a{{labels.size()}, {}};
  for (int l : labels) {
    if (l < 0 || l > 255) throw DataError("label " + std::to_string(l) + " does not fit in a byte");
    a.bytes.push_back(static_cast<std::uint8_t>(l));
  }
  auto out = open_out(path);
  write_idx(out, a);
}

Split load_csv(const std::filesystem::path& path, std::size_t dim) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::vector<double> values;
  Split s;
  std::string line;
  std::size_t rows = 0;
  std::size_t line_no = 0;
  std::optional<bool> labeled;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, ',');) fields.push_back(f);
    const bool has_label = fields.size() == dim + 1;
    if (!has_label && fields.size() != dim) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(dim) +
                      " or " + std::to_string(dim + 1) + " columns, got " + std::to_string(fields.size()));
    }
    if (labeled && *labeled != has_label) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": inconsistent label column");
    }
    labeled = has_label;
    for (std::size_t c = 0; c < dim; ++c) {
      double v = 0.0;
      try {
        v = std::stod(fields[c]);
      } catch (const std::exception&) {
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": bad number '" + fields[c] + "'");
      }
      if (!(v >= 0.0 && v <= 1.0)) {
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": value outside [0, 1]");
      }
      values.push_back(v);
    }
    if (has_label) s.labels.push_back(std::stoi(fields[dim]));
    ++rows;
  }
  s.x = Tensor({rows, dim}, std::move(values));
  return s;
}

std::vector<std::vector<std::size_t>> split_indices(std::size_t rows, const std::vector<std::size_t>& sizes,
                                                    Rng& rng) {
  const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  if (total > rows) {
    throw std::invalid_argument("split: requested " + std::to_string(total) + " rows but only " +
                                std::to_string(rows) + " available");
  }
  std::vector<std::size_t> perm(rows);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  // Fisher-Yates with an explicit draw so the permutation does not depend on
  // the standard library's shuffle implementation.
  for (std::size_t i = rows; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(perm[i - 1], perm[pick(rng)]);
  }
  std::vector<std::vector<std::size_t>> out;
  std::size_t at = 0;
  for (auto n : sizes) {
    out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(at), perm.begin() + static_cast<std::ptrdiff_t>(at + n));
    at += n;
  }
  return out;
}

std::vector<Split> split(const Split& source, const std::vector<std::size_t>& sizes, Rng& rng) {
  std::vector<Split> out;
  for (const auto& idx : split_indices(source.size(), sizes, rng)) {
    Split s{source.x.gather_rows(idx), {}};
    if (!source.labels.empty()) {
      for (auto i : idx) s.labels.push_back(source.labels[i]);
    }
    out.push_back(std::move(s));
  }
  return out;
}

const std::vector<Manifest>& builtin_manifests() {
  static const std::vector<Manifest> table = {
      {"onehot", 4, 1000, 100, 1000, Likelihood::Bernoulli, false, 2},
      {"mnist", 784, 50000, 10000, 10000, Likelihood::Bernoulli, true, 40},
      {"omniglot", 784, 23000, 1345, 8070, Likelihood::Bernoulli, true, 40},
      {"freyfaces", 560, 1565, 200, 200, Likelihood::Gaussian, false, 40},
      {"histopathology", 784, 6800, 2000, 2000, Likelihood::Gaussian, false, 40},
      {"mnist-subset", 784, 5000, 1000, 2000, Likelihood::Bernoulli, true, 40},
  };
  return table;
}

const Manifest* find_manifest(std::string_view name) {
  for (const auto& m : builtin_manifests()) {
    if (m.name == name) return &m;
  }
  return nullptr;
}

ManifestReport manifest_check(const Dataset& dataset, std::string_view expected) {
  ManifestReport r;
  const Manifest* m = find_manifest(expected);
  if (!m) {
    r.ok = false;
    r.problems.push_back("no manifest for dataset '" + std::string(expected) + "'");
    return r;
  }
  const auto expect = [&](const char* field, std::size_t got, std::size_t want) {
    if (got != want) {
      r.ok = false;
      r.problems.push_back(std::string(field) + ": expected " + std::to_string(want) + ", got " +
                           std::to_string(got));
    }
  };
  expect("dim", dataset.dim, m->dim);
  expect("train", dataset.train.size(), m->train);
  expect("valid", dataset.valid.size(), m->valid);
  expect("test", dataset.test.size(), m->test);
  for (const auto* s : {&dataset.train, &dataset.valid, &dataset.test}) {
    if (s->size() > 0 && s->x.cols() != dataset.dim) {
      r.ok = false;
      r.problems.push_back("split column count " + std::to_string(s->x.cols()) + " differs from dim");
      break;
    }
  }
  return r;
}

Dataset load_dataset(std::string_view name, const std::filesystem::path& root, std::uint64_t seed,
                     bool onehot_valid_from_train) {
  Rng rng(seed);
  if (name == "onehot") return generate_onehot(rng, onehot_valid_from_train);
  const Manifest* m = find_manifest(name);
  if (!m) throw DataError("unknown dataset '" + std::string(name) + "'");
  const auto dir = root / std::string(name);
  if (!std::filesystem::is_directory(dir)) throw DataError("dataset directory '" + dir.string() + "' not found");
  Dataset d{m->name, m->dim, m->likelihood, m->binarize, {}, {}, {}};
  const auto train_images = dir / "train-images-idx3-ubyte";
  if (std::filesystem::exists(train_images)) {
    Split pool{load_idx(train_images), {}};
    if (std::filesystem::exists(dir / "train-labels-idx1-ubyte")) {
      pool.labels = load_idx_labels(dir / "train-labels-idx1-ubyte");
    }
    auto parts = split(pool, {m->train, m->valid}, rng);
    d.train = std::move(parts[0]);
    d.valid = std::move(parts[1]);
    d.test.x = load_idx(dir / "t10k-images-idx3-ubyte");
    if (std::filesystem::exists(dir / "t10k-labels-idx1-ubyte")) {
      d.test.labels = load_idx_labels(dir / "t10k-labels-idx1-ubyte");
    }
    if (d.test.size() > m->test) {
      std::vector<std::size_t> idx(m->test);
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      d.test.x = d.test.x.gather_rows(idx);
      if (!d.test.labels.empty()) d.test.labels.resize(m->test);
    }
  } else {
    d.train = load_csv(dir / "train.csv", m->dim);
    d.valid = load_csv(dir / "valid.csv", m->dim);
    d.test = load_csv(dir / "test.csv", m->dim);
  }
  for (const auto* s : {&d.train, &d.valid, &d.test}) {
    if (s->size() > 0 && s->x.cols() != m->dim) {
      throw DataError("dataset '" + d.name + "' has dimension " + std::to_string(s->x.cols()) + ", expected " +
                      std::to_string(m->dim));
    }
  }
  return d;
}

}  // namespace ipvae::data
