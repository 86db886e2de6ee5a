#pragma once

#include <string>
#include <vector>

#include "cdyn/dataset.hpp"

namespace cdyn {

struct NormalizeReport {
  std::vector<std::string> dropped_cells;
};

/// Library-size normalization to 10k counts per cell followed by log1p.
/// Zero-sum cells are dropped and listed in `report`.
SnapshotDataset normalize_counts(const SnapshotDataset& ds, NormalizeReport* report = nullptr);

/// Top-k genes by variance over the masked cells, ties by ascending index.
/// Returned indices are sorted ascending.
std::vector<std::size_t> select_hvg(const SnapshotDataset& ds, const std::vector<bool>& training_mask,
                                    std::size_t k);

/// Column variance (population, divide by n) over masked rows.
std::vector<double> masked_variance(const Matrix& x, const std::vector<bool>& mask);

}  // namespace cdyn
