#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cdyn/config.hpp"
#include "cdyn/dataset.hpp"
#include "cdyn/folds.hpp"
#include "cdyn/model.hpp"
#include "cdyn/recovery.hpp"
#include "cdyn/synthgen.hpp"

namespace cdyn {

/// Per-fold metric names, in CSV order. Recovery metrics follow when
/// ground-truth latents exist.
const std::vector<std::string>& perturb_metric_names();
const std::vector<std::string>& recovery_metric_names();

struct RecoverySummary {
  MccResult mcc;
  LinearFitResult linear;
  ProbeReport probe;
};

/// Recovery of encoder means against true latents (rows aligned), with the
/// first d_iota true columns the invariant block.
RecoverySummary evaluate_recovery(const Matrix& z_hat, const Matrix& z_true, std::size_t d_iota,
                                  const ProbeOptions& probe);

struct FoldResult {
  std::string held_out;
  std::string embedding_used;
  bool fallback = false;
  std::map<std::string, double> metrics;
  std::map<int, std::map<std::string, double>> per_time;
  std::optional<RecoverySummary> recovery;
};

struct EvaluationReport {
  std::vector<FoldResult> folds;
  std::map<std::string, double> pooled;
  bool has_recovery = false;
  std::size_t K = 0;

  std::string to_json() const;
  /// fold,metric,value rows, one per fold and metric.
  std::string to_csv() const;
};

/// Source of predictions for one fold: returns predicted cells of
/// `held_out` for each requested time (same genes as `ds`).
struct FoldPredictor {
  virtual ~FoldPredictor() = default;
  virtual std::map<int, Matrix> predict(const FoldSpec& fold, const SnapshotDataset& ds,
                                        const std::vector<int>& times, FoldResult& result) = 0;
  /// Encoder means for every cell, or nullopt when not model based.
  virtual std::optional<Matrix> encode(const FoldSpec& fold, const SnapshotDataset& ds) = 0;
};

/// Model predictor: each fold's model comes from `models` (keyed by held-out
/// id) and rolls forward from the held-out condition's earliest snapshot.
class ModelPredictor : public FoldPredictor {
 public:
  ModelPredictor(std::map<std::string, ModelParams> models, std::uint64_t seed);
  std::map<int, Matrix> predict(const FoldSpec& fold, const SnapshotDataset& ds, const std::vector<int>& times,
                                FoldResult& result) override;
  std::optional<Matrix> encode(const FoldSpec& fold, const SnapshotDataset& ds) override;

 private:
  std::map<std::string, ModelParams> models_;
  std::uint64_t seed_;
};

/// Reads predicted cells from another snapshot table.
class TablePredictor : public FoldPredictor {
 public:
  explicit TablePredictor(SnapshotDataset pred) : pred_(std::move(pred)) {}
  std::map<int, Matrix> predict(const FoldSpec& fold, const SnapshotDataset& ds, const std::vector<int>& times,
                                FoldResult& result) override;
  std::optional<Matrix> encode(const FoldSpec&, const SnapshotDataset&) override { return std::nullopt; }

 private:
  SnapshotDataset pred_;
};

/// Runs the leave-one-out loop: metrics per fold on every time after the
/// held-out condition's earliest snapshot, pooled metrics, and recovery
/// metrics when `latents` is given.
EvaluationReport evaluate_folds(const SnapshotDataset& ds, const std::vector<FoldSpec>& folds,
                                FoldPredictor& predictor, const std::optional<Matrix>& latents,
                                std::size_t d_iota, const ProbeOptions& probe);

struct EnvironmentDiagnostic {
  std::string condition;
  double mean_norm_iota = 0.0;
  double mean_norm_nu = 0.0;
  std::size_t samples = 0;
};

struct DiagnoseReport {
  std::string baseline;
  std::vector<EnvironmentDiagnostic> environments;
  double mean_norm_iota = 0.0;
  double mean_norm_nu = 0.0;
  double ratio = 0.0;

  std::string to_json() const;
};

/// Mean norms of the invariant and responsive blocks of the transition score
/// difference for every non-baseline model condition, at encoded cells.
DiagnoseReport diagnose_model(const ModelParams& params, const SnapshotDataset& ds, std::size_t max_samples,
                              std::uint64_t seed);
/// Same statistic under the ground-truth generator law.
DiagnoseReport diagnose_generator(const Generator& gen, const TrajectoryBundle& bundle);

struct GradcheckOptions {
  std::size_t trials = 20;
  std::size_t d_iota = 2;
  std::size_t d_nu = 3;
  std::size_t p = 20;
  std::size_t batch = 8;
  std::size_t hidden = 16;
  double tolerance = 1e-4;
  double step = 1e-5;
  std::uint64_t seed = 0;
};

struct GradcheckTrial {
  double max_relative_error = 0.0;
  std::size_t worst_coordinate = 0;
  std::string worst_block;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradcheckSummary {
  std::vector<GradcheckTrial> trials;
  double worst = 0.0;
  bool pass = true;
};

/// Finite-difference check of total_loss on random models and batches.
GradcheckSummary run_gradcheck(const GradcheckOptions& options);

}  // namespace cdyn
