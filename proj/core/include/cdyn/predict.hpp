#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cdyn/dataset.hpp"
#include "cdyn/model.hpp"

namespace cdyn {

/// Which model embedding stands in for a requested condition.
struct ConditionResolution {
  std::string requested;
  std::string used;
  bool fallback = false;
  /// Size of the symmetric difference of target sets (0 when not a fallback).
  std::size_t distance = 0;
};

/// Seen conditions map to themselves. Unseen ones map to the model condition
/// whose target set (from `ds`) is nearest in Hamming distance; ties go to
/// the earlier model condition.
ConditionResolution resolve_condition(const ModelParams& params, const SnapshotDataset& ds,
                                      const std::string& condition);

struct Rollout {
  /// Latents and observations at start_time + 1 .. start_time + horizon.
  std::vector<Matrix> z;
  std::vector<Matrix> x;
  std::vector<int> times;
};

/// Encodes x_start (posterior means) at `start_time`, rolls the transition
/// prior forward `horizon` steps sampling innovations, decodes the means.
Rollout rollout(const ModelParams& params, const Matrix& x_start, const std::string& condition,
                int start_time, int horizon, std::uint64_t seed);

/// Posterior means (z_iota, z_nu) of every dataset cell, using each cell's
/// resolved condition.
Matrix encode_dataset(const ModelParams& params, const SnapshotDataset& ds);

}  // namespace cdyn
