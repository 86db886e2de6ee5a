#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "cdyn/config.hpp"
#include "cdyn/dataset.hpp"
#include "cdyn/model.hpp"
#include "cdyn/objective.hpp"

namespace cdyn {

enum class Ablation { kNone, kAlignment, kSparsity, kBoth };

Ablation parse_ablation(std::string_view text);
std::string_view to_string(Ablation a);
/// Config with the ablated weights set to zero.
RunConfig apply_ablation(RunConfig config, Ablation a);

/// Model dimensions for a dataset and a set of training conditions.
ModelConfig model_config_for(const SnapshotDataset& ds, const std::vector<std::string>& training,
                             const RunConfig& config);

struct TrainResult {
  ModelParams params;
  std::size_t steps = 0;
  LossReport last;
  std::vector<std::string> skipped;
};

/// Called after every optimizer step with (step, epoch, report).
using StepCallback = std::function<void(std::size_t, std::size_t, const LossReport&)>;

/// Adam on the total objective over `training` conditions for config.epochs
/// epochs. Each step's LossReport is written to `log` as one JSON line.
/// Throws NumericError naming the step if a gradient is non-finite.
TrainResult train_model(const SnapshotDataset& ds, const std::vector<std::string>& training,
                        const RunConfig& config, std::ostream* log = nullptr,
                        const StepCallback& on_step = {});

}  // namespace cdyn
