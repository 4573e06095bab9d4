#pragma once

#include <cstddef>
#include <functional>
#include <string>

#include "ipvae/graph.hpp"

namespace ipvae::diff {

/// Builds a scalar-valued graph from the given parameters. Must register each
/// entry of `params` with Graph::parameter and be deterministic (reseed any RNG
/// inside the builder).
using ScalarBuilder = std::function<Node(Graph&, const ParamMap&)>;

struct FiniteDiffReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coords_checked = 0;
};

/// Compares reverse-mode gradients against central differences. The error of
/// a coordinate is |analytic - numeric| / max(1, |analytic|). `max_coords`
/// limits the number of coordinates probed per parameter (0 means all); the
/// probed subset is spread evenly over the parameter.
FiniteDiffReport finite_diff_check(const ScalarBuilder& f, const ParamMap& params, double eps,
                                   std::size_t max_coords = 0);

}  // namespace ipvae::diff
