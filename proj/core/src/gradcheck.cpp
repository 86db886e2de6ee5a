#include "cdyn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cdyn/matrix.hpp"

namespace cdyn {

GradCheckResult finite_diff_check(const DifferentiableFn& fn, std::span<const double> params,
                                  double h) {
  if (!(h > 0.0)) throw ValidationError("finite_diff_check: step must be positive");
  for (double p : params) {
    if (!std::isfinite(p)) throw ValidationError("finite_diff_check: non-finite parameter");
  }
  const LossAndGradient base = fn(params);
  if (base.gradient.size() != params.size()) {
    throw ValidationError("finite_diff_check: gradient length does not match parameters");
  }

  std::vector<double> x(params.begin(), params.end());
  GradCheckResult result;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = fn(x).loss;
    x[i] = saved - h;
    const double down = fn(x).loss;
    x[i] = saved;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("finite_diff_check: non-finite loss when perturbing coordinate " +
                         std::to_string(i));
    }
    const double numeric = (up - down) / (2.0 * h);
    const double analytic = base.gradient[i];
    const double err = std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic));
    if (i == 0 || err > result.max_relative_error) {
      result.max_relative_error = err;
      result.worst_coordinate = i;
      result.analytic_at_worst = analytic;
      result.numeric_at_worst = numeric;
    }
  }
  return result;
}

}  // namespace cdyn
