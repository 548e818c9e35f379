#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace saccade {

struct GradSuiteRow {
  std::string op;
  double max_rel_err = 0.0;
  double threshold = 1e-4;
  bool pass = false;
};

// Names of every differentiable operation covered by the suite.
const std::vector<std::string>& gradient_suite_ops();

// Central finite-difference check of each registered op on small random
// instances. `corrupt_op` (test hook) perturbs that op's analytic gradient
// so its row must fail; an unknown name throws std::invalid_argument.
std::vector<GradSuiteRow> run_gradient_suite(std::uint64_t seed,
                                             const std::string& corrupt_op = "",
                                             double threshold = 1e-4);

}  // namespace saccade
