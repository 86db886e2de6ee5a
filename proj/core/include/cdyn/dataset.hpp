#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cdyn/matrix.hpp"

namespace cdyn {

enum class ExpressionMode { kCounts, kNormalized };

struct ConditionInfo {
  std::string id;
  std::vector<std::string> targets;
  bool is_control = false;

  friend bool operator==(const ConditionInfo&, const ConditionInfo&) = default;
};

/// Cells x genes expression with per-cell condition and time labels.
struct SnapshotDataset {
  Matrix expression;
  std::vector<std::string> cell_ids;
  std::vector<std::size_t> condition;  ///< index into `conditions`
  std::vector<int> time;
  std::vector<std::string> genes;
  std::vector<ConditionInfo> conditions;
  ExpressionMode mode = ExpressionMode::kNormalized;

  std::size_t num_cells() const { return expression.rows(); }
  std::size_t num_genes() const { return expression.cols(); }
  std::size_t control_index() const;
  std::size_t condition_index(const std::string& id) const;
  /// Sorted distinct time indices present.
  std::vector<int> times() const;
  /// Row indices of the (condition, time) group, in file order.
  std::vector<std::size_t> cells_of(std::size_t cond, int t) const;
  Matrix group(std::size_t cond, int t) const;
  /// Keeps only the listed rows.
  SnapshotDataset subset_cells(const std::vector<std::size_t>& rows) const;
  SnapshotDataset subset_genes(const std::vector<std::size_t>& cols) const;
  /// Throws ValidationError on any broken invariant.
  void validate() const;

  friend bool operator==(const SnapshotDataset&, const SnapshotDataset&) = default;
};

/// Reads `path` (cell_id,condition,time,<genes...>) and the sibling
/// conditions.json. Count mode is recorded in the manifest ("mode").
SnapshotDataset load_snapshot_table(const std::filesystem::path& path);
/// Writes the table and the sibling conditions.json.
void save_snapshot_table(const SnapshotDataset& ds, const std::filesystem::path& path);

/// Binary mirror: "CDYN1", little-endian u64 dims, float64 row-major.
/// Labels are stored as length-prefixed strings after the matrix.
void save_snapshot_binary(const SnapshotDataset& ds, const std::filesystem::path& path);
SnapshotDataset load_snapshot_binary(const std::filesystem::path& path);

/// Accepts a directory holding snapshot.csv, a .csv table or a .bin mirror.
SnapshotDataset load_dataset(const std::filesystem::path& path);

void write_matrix_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
                      const Matrix& m);
Matrix read_matrix_csv(const std::filesystem::path& path, std::vector<std::string>* header = nullptr);

/// Ground-truth latents row-aligned with the dataset, from
/// <dir>/latents_truth/<condition>_t<k>.csv; nullopt when that is absent.
std::optional<Matrix> load_latent_truth(const std::filesystem::path& dir, const SnapshotDataset& ds,
                                        std::size_t* d_iota = nullptr);

/// Shortest round-trip decimal form of a double.
std::string format_double(double v);

}  // namespace cdyn
