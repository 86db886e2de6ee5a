#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cdyn/coupling.hpp"
#include "cdyn/dataset.hpp"
#include "cdyn/objective.hpp"

namespace cdyn {

struct BatchOptions {
  /// Pairing of cells across t-1 -> t within a condition.
  CouplingMethod temporal = CouplingMethod::kIndependent;
  /// Pairing of same-time perturbed and control cells.
  CrossfitOptions align;
  std::size_t batch_size = 256;
  /// Temporal pairs drawn per (u, t) group and epoch; 0 means the smaller group size.
  std::size_t pairs_per_group = 0;
  /// Cells subsampled from each side before a Sinkhorn solve.
  std::size_t coupling_pool = 256;
  bool with_alignment = true;
};

/// One optimizer step's worth of data.
struct TrainingStep {
  PairBatch pairs;
  std::optional<AlignBatch> align;
};

struct BatchStream {
  std::vector<TrainingStep> steps;
  /// (condition, t) transitions skipped because a snapshot is missing.
  std::vector<std::string> skipped;
};

/// One epoch of batches over the training conditions, deterministic in seed.
/// Step order is shuffled; every step holds a single (u, t) group.
BatchStream build_pair_batches(const SnapshotDataset& ds, const std::vector<std::string>& training,
                               const BatchOptions& options, std::uint64_t seed);

}  // namespace cdyn
