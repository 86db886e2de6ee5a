#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "cdyn/matrix.hpp"

namespace cdyn {

/// Seeded random source. Every stochastic routine takes one of these (or a
/// seed to build one) so runs are reproducible.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform(double lo = 0.0, double hi = 1.0) {
    return lo + (hi - lo) * std::generate_canonical<double, 53>(engine_);
  }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
  }
  bool bernoulli(double p) { return uniform() < p; }

  Matrix normal_matrix(std::size_t rows, std::size_t cols, double stddev = 1.0);
  std::vector<double> normal_vector(std::size_t n);
  std::vector<std::size_t> permutation(std::size_t n);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Mixes a base seed with a stream tag (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace cdyn
