#include "ipvae/finite_diff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ipvae::diff {
namespace {

double evaluate(const ScalarBuilder& f, const ParamMap& params) {
  Graph g;
  const Node out = f(g, params);
  const double v = g.value(out).item();
  if (std::isnan(v)) throw std::runtime_error("finite_diff_check: function returned NaN");
  return v;
}

}  // namespace

FiniteDiffReport finite_diff_check(const ScalarBuilder& f, const ParamMap& params, double eps,
                                   std::size_t max_coords) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_check: eps must be positive");

  ParamMap analytic;
  {
    Graph g;
    const Node out = f(g, params);
    if (std::isnan(g.value(out).item())) {
      throw std::runtime_error("finite_diff_check: function returned NaN");
    }
    analytic = g.backward(out);
  }

  FiniteDiffReport report;
  ParamMap probe = params;
  for (auto& [name, tensor] : probe) {
    auto it = analytic.find(name);
    if (it == analytic.end()) {
      throw std::runtime_error("finite_diff_check: builder did not register parameter '" + name + "'");
    }
    const std::size_t n = tensor.size();
    const std::size_t count = (max_coords == 0 || max_coords >= n) ? n : max_coords;
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t i = count == n ? k : (k * n) / count;
      const double saved = tensor[i];
      tensor[i] = saved + eps;
      const double up = evaluate(f, probe);
      tensor[i] = saved - eps;
      const double down = evaluate(f, probe);
      tensor[i] = saved;

      const double numeric = (up - down) / (2.0 * eps);
      const double a = it->second[i];
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      ++report.coords_checked;
      if (report.worst_param.empty() || err > report.max_rel_err) {
        report.max_rel_err = err;
        report.worst_param = name;
        report.worst_index = i;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace ipvae::diff
