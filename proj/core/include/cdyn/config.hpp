#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "cdyn/batches.hpp"
#include "cdyn/model.hpp"
#include "cdyn/objective.hpp"

namespace cdyn {

/// Everything a training or evaluation run depends on. The serialized form
/// is written next to every artifact as its provenance record.
struct RunConfig {
  std::size_t d_iota = 2;
  std::size_t d_nu = 3;
  std::size_t hidden = 64;
  std::size_t d_u = 8;
  std::size_t target_embed = 4;

  double lambda_align = 1.0;
  double lambda_reg = 0.01;
  double prior_kl = 0.0;

  double learning_rate = 1e-3;
  std::size_t batch_size = 256;
  std::size_t epochs = 50;
  std::size_t pairs_per_group = 0;

  std::string temporal_coupling = "independent";
  std::string align_coupling = "sinkhorn";
  double epsilon_scale = 0.05;
  std::size_t coupling_pool = 256;
  double sinkhorn_tol = 1e-4;
  std::size_t sinkhorn_max_iters = 10000;

  std::uint64_t seed = 0;
  std::size_t hvg = 0;
  std::size_t K = 100;

  void validate() const;
  std::string to_json() const;
  static RunConfig from_json(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  LossWeights weights() const { return {lambda_align, lambda_reg, prior_kl}; }
  BatchOptions batch_options() const;
};

/// Seed override from the CDYN_SEED environment variable, if set.
void apply_seed_env(RunConfig& config);
bool seed_from_env(std::uint64_t& seed);

}  // namespace cdyn
