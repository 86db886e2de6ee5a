#pragma once

#include <cstdint>
#include <vector>

#include "cdyn/matrix.hpp"

namespace cdyn {

struct MccResult {
  double mcc = 0.0;
  /// assignment[i] = estimated column matched to true column i.
  std::vector<std::size_t> assignment;
  /// Columns (on either side) with zero variance; their correlations are 0.
  std::size_t degenerate_columns = 0;
};

/// Absolute Pearson correlations between columns of z_hat and z_true,
/// maximized over one-to-one assignments. Exhaustive for d <= 8,
/// Hungarian algorithm beyond.
MccResult mcc_nu(const Matrix& z_hat, const Matrix& z_true);

/// Square weight matrix -> assignment maximizing the summed weight.
std::vector<std::size_t> max_weight_assignment(const Matrix& weights);

struct LinearFitResult {
  std::vector<double> r2;  ///< one per true coordinate, held-out split
  double r2_mean = 0.0;
  bool degenerate = false;  ///< rank-deficient design
};

/// OLS with intercept from z_hat to each column of z_true, fit on a random
/// 80% split and scored on the other 20%.
LinearFitResult linear_block_fit(const Matrix& z_hat, const Matrix& z_true, std::uint64_t seed = 0);

struct ProbeOptions {
  std::size_t hidden = 64;
  std::size_t epochs = 500;
  std::size_t batch_size = 256;
  double learning_rate = 1e-3;
  /// Rows used at most (random subset); 0 keeps every row.
  std::size_t max_rows = 5000;
  std::uint64_t seed = 0;
};

struct ProbeReport {
  std::vector<double> r2;
  std::vector<double> spearman;
  double r2_mean = 0.0;
  double spearman_mean = 0.0;
  std::uint64_t seed = 0;
};

/// Fits a two-hidden-layer tanh regressor z_hat -> z_true on an 80% split
/// (both sides standardized with train-split statistics) and reports R^2 and
/// Spearman per factor on the held-out 20%.
ProbeReport probe_grounding(const Matrix& z_hat, const Matrix& z_true, const ProbeOptions& options = {});

/// Deterministic 80/20 row split.
void train_test_split(std::size_t n, std::uint64_t seed, std::vector<std::size_t>& train,
                      std::vector<std::size_t>& test);

}  // namespace cdyn
