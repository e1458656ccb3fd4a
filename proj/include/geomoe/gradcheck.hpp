#pragma once

#include <functional>
#include <vector>

#include "geomoe/autograd.hpp"
#include "geomoe/rng.hpp"

namespace geomoe {

struct GradCheckOptions {
  double eps = 1e-6;
  // Coordinates sampled across all leaves; 0 checks every coordinate.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
};

// Compares the analytic gradient of loss_fn against central differences.
// The error per coordinate is |analytic - numeric| / max(1, |analytic|).
// loss_fn must be deterministic and rebuild its graph on every call.
template <typename T>
GradCheckResult finite_diff_check(const std::function<Var<T>()>& loss_fn, const std::vector<Var<T>>& leaves,
                                  const GradCheckOptions& opts = {});

}  // namespace geomoe
