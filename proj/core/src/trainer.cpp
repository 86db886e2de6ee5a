#include "cdyn/trainer.hpp"

#include <cmath>
#include <ostream>

#include "cdyn/adam.hpp"
#include "cdyn/batches.hpp"
#include "cdyn/rng.hpp"

namespace cdyn {

Ablation parse_ablation(std::string_view text) {
  if (text == "none") return Ablation::kNone;
  if (text == "alignment") return Ablation::kAlignment;
  if (text == "sparsity") return Ablation::kSparsity;
  if (text == "both") return Ablation::kBoth;
  throw ValidationError("unknown ablation '" + std::string(text) + "'");
}

std::string_view to_string(Ablation a) {
  switch (a) {
    case Ablation::kNone: return "none";
    case Ablation::kAlignment: return "alignment";
    case Ablation::kSparsity: return "sparsity";
    case Ablation::kBoth: return "both";
  }
  return "none";
}

RunConfig apply_ablation(RunConfig config, Ablation a) {
  if (a == Ablation::kAlignment || a == Ablation::kBoth) config.lambda_align = 0.0;
  if (a == Ablation::kSparsity || a == Ablation::kBoth) config.lambda_reg = 0.0;
  return config;
}

ModelConfig model_config_for(const SnapshotDataset& ds, const std::vector<std::string>& training,
                             const RunConfig& config) {
  ModelConfig m;
  m.d_iota = config.d_iota;
  m.d_nu = config.d_nu;
  m.p = ds.num_genes();
  m.d_u = config.d_u;
  m.hidden = config.hidden;
  m.target_embed = config.target_embed;
  const auto times = ds.times();
  m.T = times.empty() ? 1 : std::max(1, times.back());
  m.conditions = training;
  m.validate();
  return m;
}

TrainResult train_model(const SnapshotDataset& ds, const std::vector<std::string>& training,
                        const RunConfig& config, std::ostream* log, const StepCallback& on_step) {
  config.validate();
  if (training.empty()) throw ValidationError("train: no training conditions");
  TrainResult result{ModelParams::initialize(model_config_for(ds, training, config), config.seed), 0, {}, {}};
  AdamState adam(result.params.size(), AdamOptions{config.learning_rate});
  const LossWeights weights = config.weights();
  const BatchOptions batch_options = config.batch_options();

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    BatchStream stream = build_pair_batches(ds, training, batch_options, derive_seed(config.seed, 0x10000 + epoch));
    if (epoch == 0) result.skipped = stream.skipped;
    if (stream.steps.empty()) throw ValidationError("train: no adjacent-time pairs in the training data");
    for (const TrainingStep& step : stream.steps) {
      const AlignBatch* align = step.align ? &*step.align : nullptr;
      LossEvaluation ev = total_loss_and_gradient(result.params, result.params.values(), step.pairs, align, weights,
                                                  derive_seed(config.seed, result.steps));
      if (!std::isfinite(ev.report.total)) {
        throw NumericError("train: non-finite loss at step " + std::to_string(result.steps));
      }
      try {
        adam.step(result.params.values(), ev.gradient);
      } catch (const NumericError& e) {
        throw NumericError("train: step " + std::to_string(result.steps) + ": " + e.what());
      }
      if (log) *log << ev.report.to_json_line(result.steps) << '\n';
      if (on_step) on_step(result.steps, epoch, ev.report);
      result.last = ev.report;
      ++result.steps;
    }
  }
  return result;
}

}  // namespace cdyn
