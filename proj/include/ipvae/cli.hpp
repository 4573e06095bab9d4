#pragma once

#include <iosfwd>

namespace ipvae::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Entry point of the `ipvae` tool: train, eval, export-latents, check-data.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ipvae::cli
