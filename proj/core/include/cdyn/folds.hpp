#pragma once

#include <span>
#include <string>
#include <vector>

#include "cdyn/dataset.hpp"

namespace cdyn {

/// One leave-one-intervention-out split.
struct FoldSpec {
  std::string held_out;
  std::vector<std::string> training;  ///< control first
  std::vector<std::size_t> hvg;       ///< gene indices, ascending
  std::vector<std::size_t> de_mask;   ///< gene indices, ascending
  std::size_t de_k = 0;

  std::string to_json() const;
};

struct FoldOptions {
  /// Number of HVGs per fold; 0 keeps every gene.
  std::size_t hvg = 0;
  /// Top-K DE genes per training (u, t); clamped to G - 1.
  std::size_t K = 100;
};

/// Pseudobulk (1 x G) of a (condition, time) group; throws if empty.
Matrix pseudobulk(const SnapshotDataset& ds, std::size_t cond, int t);

/// Indices of the k largest entries of |v| (ties by ascending index), ascending.
std::vector<std::size_t> top_k_abs(std::span<const double> v, std::size_t k);

/// Union over training (u, t), u non-control, of the top-K genes by
/// |pseudobulk(u, t) - pseudobulk(control, t)|.
std::vector<std::size_t> de_gene_mask(const SnapshotDataset& ds,
                                      const std::vector<std::string>& training, std::size_t K);

std::vector<bool> training_cell_mask(const SnapshotDataset& ds, const std::vector<std::string>& training);

std::vector<FoldSpec> build_loo_folds(const SnapshotDataset& ds, const FoldOptions& options);

}  // namespace cdyn
