#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "cdyn/matrix.hpp"

namespace cdyn {

enum class CouplingMethod { kIndependent, kSinkhorn };

std::string_view to_string(CouplingMethod m);
CouplingMethod parse_coupling_method(std::string_view text);

/// Weighted pairing between a source and a destination cell population.
struct CouplingPlan {
  std::vector<std::size_t> src;
  std::vector<std::size_t> dst;
  std::vector<double> weights;
  CouplingMethod method = CouplingMethod::kIndependent;

  std::size_t size() const { return src.size(); }
  /// Checks equal lengths, index bounds, non-negative weights summing to 1 +- 1e-9.
  void validate(std::size_t n_src, std::size_t n_dst) const;

  std::string to_json() const;
  static CouplingPlan from_json(const std::string& text);
};

/// n_pairs uniformly random (src, dst) pairs, each with weight 1 / n_pairs.
CouplingPlan independent_coupling(std::size_t n_src, std::size_t n_dst, std::size_t n_pairs,
                                  std::uint64_t seed);

struct SinkhornOptions {
  double epsilon = 0.05;
  std::size_t max_iters = 10000;
  double tol = 1e-6;
};

struct SinkhornResult {
  Matrix plan;
  std::size_t iterations = 0;
  double row_violation = 0.0;
  double col_violation = 0.0;
  /// max(row, col) L1 marginal violation after each iteration.
  std::vector<double> violation_history;
};

/// Entropic OT between uniform marginals. Scalings are kept in the log
/// domain: dual potentials absorb the kernel scalings whenever those grow
/// large, so small epsilon does not underflow. Stops once both L1 marginal
/// violations are <= tol; throws NumericError (with the final violation)
/// after max_iters.
SinkhornResult sinkhorn_plan(const Matrix& cost, const SinkhornOptions& options);

/// Draws n_pairs (src, dst) pairs from a dense plan, weights 1 / n_pairs.
CouplingPlan sample_from_plan(const Matrix& plan, std::size_t n_pairs, std::uint64_t seed,
                              CouplingMethod method);

CouplingPlan sinkhorn_coupling(const Matrix& cost, const SinkhornOptions& options,
                               std::size_t n_pairs, std::uint64_t seed);

/// Pairwise squared Euclidean distances between rows.
Matrix squared_euclidean_cost(const Matrix& a, const Matrix& b);
double median_entry(const Matrix& m);

struct CrossfitOptions {
  CouplingMethod method = CouplingMethod::kSinkhorn;
  /// Entropic regularization as a multiple of the median pairwise cost.
  double epsilon_scale = 0.05;
  double tol = 1e-6;
  std::size_t max_iters = 10000;
  /// Number of pairs to draw; 0 means one per perturbed cell.
  std::size_t n_pairs = 0;
};

/// Couples same-time perturbed and control cells (rows). Sinkhorn mode uses
/// a squared Euclidean cost on the expression rows.
CouplingPlan crossfit_coupling(const Matrix& pert, const Matrix& ctrl,
                               const CrossfitOptions& options, std::uint64_t seed);

}  // namespace cdyn
