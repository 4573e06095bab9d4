#include "ipvae/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace ipvae {
namespace {

constexpr std::array<char, 8> kMagic = {'I', 'P', 'V', 'A', 'E', 'C', 'K', 'P'};

template <typename T>
void put_le(std::ostream& out, T v) {
  std::array<unsigned char, sizeof(T)> bytes{};
  std::uint64_t bits = 0;
  if constexpr (std::is_same_v<T, double>) {
    bits = std::bit_cast<std::uint64_t>(v);
  } else {
    bits = static_cast<std::uint64_t>(v);
  }
  for (std::size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

template <typename T>
T get_le(std::istream& in, const char* what) {
  std::array<unsigned char, sizeof(T)> bytes{};
  const auto offset = static_cast<long long>(in.tellg());
  if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) {
    throw CheckpointError(std::string("checkpoint truncated while reading ") + what + " at byte " +
                          std::to_string(offset));
  }
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  if constexpr (std::is_same_v<T, double>) {
    return std::bit_cast<double>(bits);
  } else {
    return static_cast<T>(bits);
  }
}

std::string get_string(std::istream& in, std::uint32_t n, const char* what) {
  std::string s(n, '\0');
  if (n && !in.read(s.data(), n)) throw CheckpointError(std::string("checkpoint truncated in ") + what);
  return s;
}

}  // namespace

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, Checkpoint::kVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.metadata.size()));
  out.write(ckpt.metadata.data(), static_cast<std::streamsize>(ckpt.metadata.size()));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& [name, t] : ckpt.params) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) put_le<std::uint64_t>(out, e);
    for (double v : t.data()) put_le<double>(out, v);
  }
  if (!out) throw CheckpointError("failed writing checkpoint");
}

Checkpoint read_checkpoint(std::istream& in) {
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) {
    throw CheckpointError("not a checkpoint file (bad magic at byte 0)");
  }
  Checkpoint ckpt;
  ckpt.version = get_le<std::uint32_t>(in, "version");
  if (ckpt.version != Checkpoint::kVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(ckpt.version));
  }
  ckpt.metadata = get_string(in, get_le<std::uint32_t>(in, "metadata length"), "metadata");
  const auto count = get_le<std::uint32_t>(in, "record count");
  for (std::uint32_t r = 0; r < count; ++r) {
    std::string name = get_string(in, get_le<std::uint32_t>(in, "name length"), "record name");
    const auto rank = get_le<std::uint32_t>(in, "rank");
    if (rank > 2) throw CheckpointError("record '" + name + "' has unsupported rank " + std::to_string(rank));
    Tensor::Shape shape;
    for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(get_le<std::uint64_t>(in, "extent"));
    Tensor t(shape);
    for (double& v : t.data()) v = get_le<double>(in, "tensor data");
    if (!ckpt.params.emplace(std::move(name), std::move(t)).second) {
      throw CheckpointError("duplicate record name in checkpoint");
    }
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open '" + path.string() + "' for writing");
  write_checkpoint(out, ckpt);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  return read_checkpoint(in);
}

}  // namespace ipvae
