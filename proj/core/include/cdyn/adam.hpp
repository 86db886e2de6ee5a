#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace cdyn {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First-order Adam optimizer state with bias correction.
class AdamState {
 public:
  AdamState(std::size_t num_params, AdamOptions options = {});

  /// Applies one update in place. Throws NumericError naming the first
  /// non-finite gradient coordinate; params are untouched in that case.
  void step(std::span<double> params, std::span<const double> grads);

  std::size_t step_count() const { return step_; }
  const AdamOptions& options() const { return options_; }
  void set_learning_rate(double lr) { options_.learning_rate = lr; }
  const std::vector<double>& first_moment() const { return m_; }
  const std::vector<double>& second_moment() const { return v_; }

 private:
  AdamOptions options_;
  std::size_t step_ = 0;
  std::vector<double> m_;
  std::vector<double> v_;
};

}  // namespace cdyn
