#include "cdyn/gaussian.hpp"

#include <cmath>
#include <string>

namespace cdyn {

void GaussianDiag::validate() const {
  if (mean.size() != logvar.size()) {
    throw ValidationError("gaussian: mean length " + std::to_string(mean.size()) +
                          " != logvar length " + std::to_string(logvar.size()));
  }
  for (std::size_t i = 0; i < mean.size(); ++i) {
    if (!std::isfinite(mean[i]) || !std::isfinite(logvar[i])) {
      throw ValidationError("gaussian: non-finite parameter at coordinate " + std::to_string(i));
    }
  }
}

GaussianDiag GaussianBatch::row(std::size_t r) const {
  auto m = mean.row_span(r);
  auto l = logvar.row_span(r);
  return {{m.begin(), m.end()}, {l.begin(), l.end()}};
}

std::vector<double> reparam_sample(const GaussianDiag& q, std::span<const double> noise) {
  q.validate();
  if (noise.size() != q.size()) {
    throw ValidationError("reparam_sample: noise length " + std::to_string(noise.size()) +
                          " != " + std::to_string(q.size()));
  }
  std::vector<double> z(q.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    z[i] = q.mean[i] + std::exp(0.5 * q.logvar[i]) * noise[i];
  }
  return z;
}

double kl_diag_gaussian(const GaussianDiag& q, const GaussianDiag& p) {
  q.validate();
  p.validate();
  if (q.size() != p.size()) {
    throw ValidationError("kl_diag_gaussian: dimension mismatch " + std::to_string(q.size()) +
                          " vs " + std::to_string(p.size()));
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    const double dm = q.mean[i] - p.mean[i];
    kl += 0.5 * (std::exp(q.logvar[i] - p.logvar[i]) + dm * dm * std::exp(-p.logvar[i]) - 1.0 +
                 p.logvar[i] - q.logvar[i]);
  }
  return kl;
}

std::vector<double> score_difference(std::span<const double> z, const GaussianDiag& env,
                                     const GaussianDiag& baseline) {
  if (z.size() != env.size() || z.size() != baseline.size()) {
    throw ValidationError("score_difference: dimension mismatch");
  }
  std::vector<double> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double s_env = -(z[i] - env.mean[i]) * std::exp(-env.logvar[i]);
    const double s_base = -(z[i] - baseline.mean[i]) * std::exp(-baseline.logvar[i]);
    out[i] = s_env - s_base;
  }
  return out;
}

}  // namespace cdyn
