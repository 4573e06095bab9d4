#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "ipvae/data.hpp"
#include "test_util.hpp"

namespace {

using namespace ipvae;
using namespace ipvae::data;
namespace fs = std::filesystem;
using testing_util::max_abs_diff;

// Fresh directory under the system temp dir, named after the running test.
fs::path scratch_dir() {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  const fs::path dir = fs::temp_directory_path() / "ipvae-tests" / (std::string(info->test_suite_name()) + "." + info->name());
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// Chi-square statistic of observed counts against a uniform expectation.
double chi_square_uniform(const std::vector<std::size_t>& counts) {
  std::size_t n = 0;
  for (auto c : counts) n += c;
  const double expected = static_cast<double>(n) / static_cast<double>(counts.size());
  double s = 0.0;
  for (auto c : counts) s += (static_cast<double>(c) - expected) * (static_cast<double>(c) - expected) / expected;
  return s;
}

// 0.99 quantile of chi-square with 3 degrees of freedom.
constexpr double kChiSquare3Df99 = 11.345;

TEST(OneHot, RowsAreOneHotWithMatchingLabels) {
  Rng rng(1);
  const auto d = generate_onehot(rng);
  for (const auto* s : {&d.train, &d.valid, &d.test}) {
    ASSERT_EQ(s->labels.size(), s->size());
    for (std::size_t r = 0; r < s->size(); ++r) {
      double sum = 0.0;
      int ones = 0;
      for (std::size_t c = 0; c < 4; ++c) {
        sum += s->x.at(r, c);
        ones += s->x.at(r, c) == 1.0;
      }
      EXPECT_EQ(sum, 1.0);
      EXPECT_EQ(ones, 1);
      EXPECT_EQ(s->x.at(r, static_cast<std::size_t>(s->labels[r])), 1.0);
    }
  }
}

TEST(OneHot, SplitSizesMatchTheTable) {
  Rng rng(2);
  const auto d = generate_onehot(rng);
  EXPECT_EQ(d.train.size(), 1000u);
  EXPECT_EQ(d.valid.size(), 100u);
  EXPECT_EQ(d.test.size(), 1000u);
  EXPECT_EQ(d.dim, 4u);
  EXPECT_EQ(d.likelihood, Likelihood::Bernoulli);
  EXPECT_TRUE(manifest_check(d, "onehot").ok);
}

TEST(OneHot, LabelFrequenciesAreUniform) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    const auto d = generate_onehot(rng);
    std::vector<std::size_t> counts(4, 0);
    for (int l : d.train.labels) ++counts[static_cast<std::size_t>(l)];
    EXPECT_LT(chi_square_uniform(counts), kChiSquare3Df99) << "seed " << seed;
  }
}

TEST(OneHot, ValidationSetSource) {
  Rng a(3), b(3);
  const auto shared = generate_onehot(a, true);
  EXPECT_EQ(max_abs_diff(shared.valid.x, shared.train.x.rows_slice(0, 100)), 0.0);
  EXPECT_EQ(shared.valid.labels, std::vector<int>(shared.train.labels.begin(), shared.train.labels.begin() + 100));
  const auto fresh = generate_onehot(b, false);
  EXPECT_EQ(fresh.train.labels, shared.train.labels);
  EXPECT_NE(fresh.valid.labels, shared.valid.labels);
}

TEST(OneHot, SameSeedSameData) {
  Rng a(4), b(4);
  const auto x = generate_onehot(a), y = generate_onehot(b);
  EXPECT_EQ(x.train.labels, y.train.labels);
  EXPECT_EQ(x.test.labels, y.test.labels);
}

TEST(Idx, HandBuiltFixtureScalesBy255) {
  const auto dir = scratch_dir();
  write_bytes(dir / "img", {0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 0, 255, 128, 64});
  const Tensor x = load_idx(dir / "img");
  ASSERT_EQ(x.shape(), (Tensor::Shape{1, 4}));
  EXPECT_EQ(x[0], 0.0);
  EXPECT_EQ(x[1], 1.0);
  EXPECT_NEAR(x[2], 0.50196, 1e-5);
  EXPECT_NEAR(x[3], 0.25098, 1e-5);
}

TEST(Idx, HeaderOnlyFileGivesEmptyMatrix) {
  const auto dir = scratch_dir();
  write_bytes(dir / "empty", {0, 0, 8, 3, 0, 0, 0, 0, 0, 0, 0, 28, 0, 0, 0, 28});
  const Tensor x = load_idx(dir / "empty");
  EXPECT_EQ(x.shape(), (Tensor::Shape{0, 784}));
}

TEST(Idx, BadMagicReportsOffsetZero) {
  const auto dir = scratch_dir();
  write_bytes(dir / "bad", {1, 0, 8, 1, 0, 0, 0, 1, 7});
  try {
    load_idx(dir / "bad");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    ASSERT_TRUE(e.offset().has_value());
    EXPECT_EQ(*e.offset(), 0u);
  }
}

TEST(Idx, TruncationReportsTheByteOffset) {
  const auto dir = scratch_dir();
  // Declares 2 x 2 items but carries only 3 bytes of data after the 12-byte header.
  write_bytes(dir / "short", {0, 0, 8, 2, 0, 0, 0, 2, 0, 0, 0, 2, 1, 2, 3});
  try {
    load_idx(dir / "short");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    ASSERT_TRUE(e.offset().has_value());
    EXPECT_EQ(*e.offset(), 15u);
  }
  write_bytes(dir / "dims", {0, 0, 8, 3, 0, 0, 0, 2, 0, 0});
  try {
    load_idx(dir / "dims");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    ASSERT_TRUE(e.offset().has_value());
    EXPECT_EQ(*e.offset(), 8u);
  }
}

TEST(Idx, MissingFileIsADataError) {
  EXPECT_THROW(load_idx(scratch_dir() / "nope"), DataError);
}

TEST(Idx, WriteThenLoadIsIdentity) {
  const auto dir = scratch_dir();
  Rng rng(5);
  std::uniform_int_distribution<int> byte(0, 255);
  Tensor x({7, 12});
  for (auto& v : x.data()) v = byte(rng) / 255.0;
  write_idx(dir / "x", x);
  EXPECT_EQ(max_abs_diff(load_idx(dir / "x"), x), 0.0);

  const std::vector<int> labels = {0, 9, 3, 255, 1};
  write_idx_labels(dir / "y", labels);
  EXPECT_EQ(load_idx_labels(dir / "y"), labels);
}

TEST(Idx, RawArrayRoundTrip) {
  const IdxArray a{{2, 3}, {1, 2, 3, 4, 5, 6}};
  std::stringstream ss;
  write_idx(ss, a);
  const auto b = read_idx(ss);
  EXPECT_EQ(b.dims, a.dims);
  EXPECT_EQ(b.bytes, a.bytes);
}

TEST(Idx, WriteRejectsOutOfRangeValues) {
  const auto dir = scratch_dir();
  EXPECT_THROW(write_idx(dir / "x", Tensor::matrix({{0.5, 1.5}})), DataError);
  EXPECT_THROW(write_idx_labels(dir / "y", {256}), DataError);
}

TEST(Csv, ReadsValuesAndOptionalLabels) {
  const auto dir = scratch_dir();
  std::ofstream(dir / "a.csv") << "0,0.5,1\n0.25,0.75,0\n";
  std::ofstream(dir / "b.csv") << "0,0.5,1,3\n\n0.25,0.75,0,7\n";
  const auto a = load_csv(dir / "a.csv", 3);
  EXPECT_EQ(max_abs_diff(a.x, Tensor::matrix({{0, 0.5, 1}, {0.25, 0.75, 0}})), 0.0);
  EXPECT_TRUE(a.labels.empty());
  const auto b = load_csv(dir / "b.csv", 3);
  EXPECT_EQ(b.size(), 2u);
  EXPECT_EQ(b.labels, (std::vector<int>{3, 7}));
}

TEST(Csv, RejectsMalformedRows) {
  const auto dir = scratch_dir();
  std::ofstream(dir / "cols.csv") << "0,0.5\n";
  std::ofstream(dir / "range.csv") << "0,1.5,0\n";
  std::ofstream(dir / "text.csv") << "0,abc,0\n";
  std::ofstream(dir / "mixed.csv") << "0,0,0\n0,0,0,1\n";
  for (const char* f : {"cols.csv", "range.csv", "text.csv", "mixed.csv"}) {
    EXPECT_THROW(load_csv(dir / f, 3), DataError) << f;
  }
}

TEST(Split, ExactPartitionWithoutOverlap) {
  Rng rng(6);
  const auto parts = split_indices(100, {60, 25, 15}, rng);
  ASSERT_EQ(parts.size(), 3u);
  std::set<std::size_t> seen;
  for (const auto& p : parts) seen.insert(p.begin(), p.end());
  EXPECT_EQ(seen.size(), 100u);
  EXPECT_EQ(*seen.rbegin(), 99u);
}

TEST(Split, TableSizesFromSixtyThousandRows) {
  Rng rng(7);
  const auto parts = split_indices(60000, {50000, 10000}, rng);
  EXPECT_EQ(parts[0].size(), 50000u);
  EXPECT_EQ(parts[1].size(), 10000u);
  std::vector<bool> used(60000, false);
  for (const auto& p : parts) {
    for (auto i : p) {
      EXPECT_FALSE(used[i]);
      used[i] = true;
    }
  }
}

TEST(Split, SameSeedSameAssignment) {
  Rng a(8), b(8), c(9);
  const auto x = split_indices(500, {400, 100}, a);
  EXPECT_EQ(x, split_indices(500, {400, 100}, b));
  EXPECT_NE(x, split_indices(500, {400, 100}, c));
}

TEST(Split, CarriesRowsAndLabels) {
  Rng rng(10);
  Split source{Tensor({20, 2}), {}};
  for (std::size_t r = 0; r < 20; ++r) {
    source.x.at(r, 0) = static_cast<double>(r) / 20.0;
    source.labels.push_back(static_cast<int>(r));
  }
  const auto parts = split(source, {12, 8}, rng);
  for (const auto& p : parts) {
    for (std::size_t r = 0; r < p.size(); ++r) {
      EXPECT_EQ(p.x.at(r, 0), static_cast<double>(p.labels[r]) / 20.0);
    }
  }
}

TEST(Split, InsufficientRowsThrows) {
  Rng rng(11);
  EXPECT_THROW(split_indices(10, {6, 5}, rng), std::invalid_argument);
}

TEST(Manifest, OffByOneNamesTheField) {
  Rng rng(12);
  auto d = generate_onehot(rng);
  d.valid.x = d.valid.x.rows_slice(0, 99);
  const auto r = manifest_check(d, "onehot");
  EXPECT_FALSE(r.ok);
  ASSERT_EQ(r.problems.size(), 1u);
  EXPECT_NE(r.problems[0].find("valid"), std::string::npos);
}

TEST(Manifest, ReportsEveryMismatch) {
  Rng rng(13);
  const auto d = generate_onehot(rng);
  const auto r = manifest_check(d, "mnist");
  EXPECT_FALSE(r.ok);
  EXPECT_EQ(r.problems.size(), 4u);
}

TEST(Manifest, UnknownDatasetHasNoManifest) {
  Rng rng(14);
  const auto r = manifest_check(generate_onehot(rng), "cifar");
  EXPECT_FALSE(r.ok);
  ASSERT_EQ(r.problems.size(), 1u);
  EXPECT_NE(r.problems[0].find("no manifest"), std::string::npos);
}

TEST(Manifest, TableRows) {
  const auto* mnist = find_manifest("mnist");
  ASSERT_NE(mnist, nullptr);
  EXPECT_EQ(mnist->dim, 784u);
  EXPECT_EQ(mnist->train, 50000u);
  EXPECT_EQ(mnist->valid, 10000u);
  EXPECT_EQ(mnist->test, 10000u);
  EXPECT_EQ(find_manifest("freyfaces")->likelihood, Likelihood::Gaussian);
  EXPECT_EQ(find_manifest("nope"), nullptr);
}

TEST(LoadDataset, IdxDirectoryIsSplitAndTruncated) {
  const auto root = scratch_dir();
  const auto dir = root / "mnist-subset";
  fs::create_directories(dir);
  Rng rng(15);
  std::uniform_int_distribution<int> byte(0, 255);
  const auto images = [&](std::size_t n) {
    IdxArray a{{n, 28, 28}, {}};
    for (std::size_t i = 0; i < n * 784; ++i) a.bytes.push_back(static_cast<std::uint8_t>(byte(rng)));
    return a;
  };
  const auto labels = [&](std::size_t n) {
    IdxArray a{{n}, {}};
    for (std::size_t i = 0; i < n; ++i) a.bytes.push_back(static_cast<std::uint8_t>(i % 10));
    return a;
  };
  const auto put = [&](const char* name, const IdxArray& a) {
    std::ofstream out(dir / name, std::ios::binary);
    write_idx(out, a);
  };
  put("train-images-idx3-ubyte", images(6100));
  put("train-labels-idx1-ubyte", labels(6100));
  put("t10k-images-idx3-ubyte", images(2100));
  put("t10k-labels-idx1-ubyte", labels(2100));

  const auto d = load_dataset("mnist-subset", root, 0);
  EXPECT_TRUE(manifest_check(d, "mnist-subset").ok);
  EXPECT_EQ(d.train.labels.size(), 5000u);
  EXPECT_EQ(d.test.labels.size(), 2000u);
  EXPECT_TRUE(d.binarize);
  for (const auto* s : {&d.train, &d.valid, &d.test}) {
    for (double v : s->x.data()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
  }
  const auto again = load_dataset("mnist-subset", root, 0);
  EXPECT_EQ(max_abs_diff(again.valid.x, d.valid.x), 0.0);
  const auto other = load_dataset("mnist-subset", root, 1);
  EXPECT_GT(max_abs_diff(other.valid.x, d.valid.x), 0.0);
}

TEST(LoadDataset, CsvDirectory) {
  const auto root = scratch_dir();
  fs::create_directories(root / "freyfaces");
  const auto write = [&](const char* name, std::size_t rows) {
    std::ofstream out(root / "freyfaces" / name);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < 560; ++c) out << (c ? "," : "") << 0.5;
      out << '\n';
    }
  };
  write("train.csv", 3);
  write("valid.csv", 2);
  write("test.csv", 1);
  const auto d = load_dataset("freyfaces", root, 0);
  EXPECT_EQ(d.likelihood, Likelihood::Gaussian);
  EXPECT_EQ(d.train.size(), 3u);
  const auto r = manifest_check(d, "freyfaces");
  EXPECT_FALSE(r.ok);
  EXPECT_EQ(r.problems.size(), 3u);
}

TEST(LoadDataset, UnknownOrMissingThrows) {
  const auto root = scratch_dir();
  EXPECT_THROW(load_dataset("cifar", root, 0), DataError);
  EXPECT_THROW(load_dataset("mnist", root, 0), DataError);
}

}  // namespace
