#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "saccade/autograd.hpp"
#include "saccade/nn.hpp"

namespace saccade {

struct GradCheckOptions {
  double epsilon = 1e-5;
  // Coordinates sampled across all parameters; all are checked when the
  // total is smaller.
  std::size_t max_coordinates = 100;
  // Denominator floor for the relative error.
  double floor = 1e-6;
  // Test hook applied to the analytic gradients before comparison.
  std::function<void(std::vector<Tensor>&)> corrupt;
};

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
};

// Compares tape gradients of `loss` against central differences, with
// rel = |analytic - numeric| / max(floor, |analytic|, |numeric|).
GradCheckResult check_gradients(const ParameterRefs& params,
                                const std::function<Var(Tape&)>& loss,
                                Rng& rng, const GradCheckOptions& options = {});

}  // namespace saccade
