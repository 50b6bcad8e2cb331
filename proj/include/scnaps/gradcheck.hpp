#pragma once

#include <functional>
#include <span>
#include <vector>

#include "scnaps/autodiff.hpp"

namespace scnaps {

// Builds a scalar loss on `tape` from leaves holding the parameter values.
using LossBuilder = std::function<ad::Var(ad::Tape& tape, std::span<const ad::Var> params)>;

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_parameter = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

// Compares reverse-mode gradients with central differences at every
// coordinate. Relative error is |a - n| / max(|a|, |n|, floor); the floor keeps
// coordinates whose true gradient is ~0 from dividing round-off by round-off.
GradCheckReport finite_difference_check(const LossBuilder& loss, std::span<const Tensor> params,
                                        double step = 1e-5, double floor = 1e-3);

}  // namespace scnaps
