#pragma once

#include <span>
#include <string>
#include <vector>

#include "cdyn/matrix.hpp"

namespace cdyn {

/// A correlation that may be undefined (a constant input). Undefined
/// correlations are reported as 0 with `degenerate` set.
struct Correlation {
  double value = 0.0;
  bool degenerate = false;
};

Correlation pearson(std::span<const double> x, std::span<const double> y);
/// Pearson correlation of average ranks.
Correlation spearman(std::span<const double> x, std::span<const double> y);
/// 1-based ranks; tied values share the mean of their ranks.
std::vector<double> average_ranks(std::span<const double> x);

/// ROC AUC from the rank statistic; tied scores count one half.
double auc_roc(std::span<const int> labels, std::span<const double> scores);
/// Average precision: sum over distinct thresholds of (R_k - R_{k-1}) P_k.
double auprc(std::span<const int> labels, std::span<const double> scores);

/// 1 - sum ||pred_k - obs_k||^2 / sum ||obs_k - mean_k obs_k||^2 over
/// paired pseudobulks (1 x G each).
double pseudobulk_r2(std::span<const Matrix> pred, std::span<const Matrix> obs);
/// Root mean squared pseudobulk error over conditions and genes.
double pseudobulk_rmse(std::span<const Matrix> pred, std::span<const Matrix> obs);

struct DeltaPearson {
  double mean = 0.0;
  std::size_t cells = 0;    ///< cells that contributed
  std::size_t skipped = 0;  ///< zero-variance shifts
};

/// Mean over cells of corr(pred_i - ctrl, obs_i - ctrl). Cells are paired by
/// row index over min(rows) rows. `genes` restricts the coordinates (empty
/// means all).
DeltaPearson delta_pearson(const Matrix& pred, const Matrix& obs, const Matrix& ctrl_pseudobulk,
                           std::span<const std::size_t> genes = {});

/// Mean over genes of |(pred - ctrl) - (obs - ctrl)| on pseudobulks.
double mae_condition(const Matrix& pred_pseudobulk, const Matrix& obs_pseudobulk,
                     const Matrix& ctrl_pseudobulk);

struct DeScores {
  double auc = 0.0;
  double auprc = 0.0;
};

/// Labels: top-K genes of |obs - ctrl|; scores |pred - ctrl|.
DeScores de_auc_auprc(const Matrix& obs_pseudobulk, const Matrix& ctrl_pseudobulk,
                      const Matrix& pred_pseudobulk, std::size_t K);
/// Same scores, labels given by a gene index set.
DeScores de_auc_auprc_labels(std::span<const std::size_t> positive_genes, const Matrix& ctrl_pseudobulk,
                             const Matrix& pred_pseudobulk);

}  // namespace cdyn
