#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace cdyn {

/// Scalar loss plus its analytic gradient at the given parameters.
struct LossAndGradient {
  double loss = 0.0;
  std::vector<double> gradient;
};

using DifferentiableFn = std::function<LossAndGradient(std::span<const double>)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_coordinate = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

/// Compares the analytic gradient against central differences over every
/// coordinate. Error per coordinate is |analytic - numeric| / max(1, |analytic|).
/// Throws NumericError if the loss is non-finite at a perturbed point.
GradCheckResult finite_diff_check(const DifferentiableFn& fn, std::span<const double> params,
                                  double h = 1e-5);

}  // namespace cdyn
