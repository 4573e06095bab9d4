#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>

#include "ipvae/tensor.hpp"

namespace ipvae {

/// Binary parameter file. All integers and reals are little-endian.
///
///   offset  field
///   0       magic "IPVAECKP" (8 bytes)
///   8       u32 version (currently 1)
///   12      u32 metadata length M, followed by M bytes of UTF-8 JSON
///           u32 record count R, followed by R records:
///             u32 name length, name bytes,
///             u32 rank, rank x u64 extents,
///             prod(extents) x f64 values (row-major)
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  ParamMap params;
  std::string metadata;  // JSON text
  std::uint32_t version = kVersion;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ipvae
