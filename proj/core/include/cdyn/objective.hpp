#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cdyn/gradcheck.hpp"
#include "cdyn/matrix.hpp"
#include "cdyn/model.hpp"

namespace cdyn {

/// Pseudo-paired consecutive snapshots: row i of x_prev is the chosen
/// predecessor of row i of x_curr. `time_index` is the time of x_curr.
struct PairBatch {
  Matrix x_prev;
  Matrix x_curr;
  std::string condition;
  int time_index = 1;
};

/// Same-time cells under a perturbation and under control, paired by rows.
struct AlignBatch {
  Matrix x_pert;
  Matrix x_ctrl;
  std::string condition;
  int time_index = 0;
};

struct LossWeights {
  double align = 1.0;
  double reg = 0.01;
  /// Weight of an optional KL(q(z^{t-1}|x^{t-1},u) || N(0, I)); 0 disables it.
  double prior_kl = 0.0;
};

/// Scalar breakdown of one objective evaluation.
///
/// total == neg_elbo + align_weight * align + reg_weight * sparsity
///          + prior_kl_weight * prior_kl, evaluated left to right.
struct LossReport {
  double total = 0.0;
  double neg_elbo = 0.0;
  double recon_prev = 0.0;
  double recon_curr = 0.0;
  double kl_transition = 0.0;
  double align = 0.0;
  double sparsity = 0.0;
  double prior_kl = 0.0;

  std::string to_json_line(std::size_t step) const;
};

/// Tape nodes of an objective evaluation.
struct LossVars {
  Var total;
  Var neg_elbo;
  Var recon_prev;
  Var recon_curr;
  Var kl_transition;
  Var align;
  Var sparsity;
  Var prior_kl;
};

struct ElboVars {
  Var elbo;
  Var recon_prev;
  Var recon_curr;
  Var kl_transition;
  GaussianVars q_prev_iota;
  GaussianVars q_prev_nu;
};

/// Records the temporal ELBO (batch mean) on the graph. Reparameterization
/// noise is a deterministic function of (seed, row contents), so a row's
/// contribution does not depend on its position in the batch.
ElboVars record_temporal_elbo(ModelGraph& graph, const PairBatch& batch, std::uint64_t seed);
Var record_alignment_loss(ModelGraph& graph, const AlignBatch& batch);
Var record_sparsity_loss(ModelGraph& graph, std::span<const std::string> conditions);
LossVars record_total_loss(ModelGraph& graph, const PairBatch& pairs, const AlignBatch* align,
                           const LossWeights& weights, std::uint64_t seed);

/// L_temp (to be maximized) and its terms; `total`/`neg_elbo` hold -L_temp.
LossReport temporal_elbo(const ModelParams& params, const PairBatch& batch, std::uint64_t seed);
double alignment_loss(const ModelParams& params, const AlignBatch& batch);
/// Sum over distinct conditions of the entrywise L1 norm of W(u).
double sparsity_loss(const ModelParams& params, std::span<const std::string> conditions);
LossReport total_loss(const ModelParams& params, const PairBatch& pairs, const AlignBatch* align,
                      const LossWeights& weights, std::uint64_t seed);

struct LossEvaluation {
  LossReport report;
  std::vector<double> gradient;
};

/// total_loss plus its gradient w.r.t. `values` (laid out like `layout`).
LossEvaluation total_loss_and_gradient(const ModelParams& layout, std::span<const double> values,
                                       const PairBatch& pairs, const AlignBatch* align,
                                       const LossWeights& weights, std::uint64_t seed);

}  // namespace cdyn
