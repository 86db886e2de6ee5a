#include "cdyn/adam.hpp"

#include <cmath>
#include <string>

#include "cdyn/matrix.hpp"

namespace cdyn {

AdamState::AdamState(std::size_t num_params, AdamOptions options)
    : options_(options), m_(num_params, 0.0), v_(num_params, 0.0) {}

void AdamState::step(std::span<double> params, std::span<const double> grads) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw ValidationError("adam: expected " + std::to_string(m_.size()) +
                          " parameters, got params=" + std::to_string(params.size()) +
                          " grads=" + std::to_string(grads.size()));
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!std::isfinite(grads[i])) {
      throw NumericError("adam: non-finite gradient at coordinate " + std::to_string(i));
    }
  }
  ++step_;
  const double b1 = options_.beta1;
  const double b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = b1 * m_[i] + (1.0 - b1) * grads[i];
    v_[i] = b2 * v_[i] + (1.0 - b2) * grads[i] * grads[i];
    const double m_hat = m_[i] / c1;
    const double v_hat = v_[i] / c2;
    params[i] -= options_.learning_rate * m_hat / (std::sqrt(v_hat) + options_.epsilon);
  }
}

}  // namespace cdyn
