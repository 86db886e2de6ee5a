#pragma once

#include <span>
#include <vector>

#include "cdyn/matrix.hpp"

namespace cdyn {

/// Diagonal Gaussian parameterized by mean and log-variance.
struct GaussianDiag {
  std::vector<double> mean;
  std::vector<double> logvar;

  std::size_t size() const { return mean.size(); }
  void validate() const;
};

/// Row-wise batch of diagonal Gaussians (B x d each).
struct GaussianBatch {
  Matrix mean;
  Matrix logvar;

  std::size_t rows() const { return mean.rows(); }
  GaussianDiag row(std::size_t r) const;
};

/// mean + exp(logvar / 2) * noise.
std::vector<double> reparam_sample(const GaussianDiag& q, std::span<const double> noise);

/// Closed-form KL(q || p) in nats.
double kl_diag_gaussian(const GaussianDiag& q, const GaussianDiag& p);

/// grad_z log N(z; m, s) - grad_z log N(z; m0, s0) for diagonal Gaussians.
std::vector<double> score_difference(std::span<const double> z, const GaussianDiag& env,
                                     const GaussianDiag& baseline);

}  // namespace cdyn
