#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cdyn/gaussian.hpp"
#include "cdyn/matrix.hpp"

namespace cdyn {

/// Knobs of the synthetic temporal interventional generator.
struct GeneratorConfig {
  std::size_t d_iota = 2;
  std::size_t d_nu = 3;
  std::size_t p = 20;
  /// Number of transition steps; snapshots are taken at t = 0..T.
  int T = 5;
  std::size_t cells = 2000;
  double alpha = 0.7;
  std::size_t mixing_depth = 2;
  /// Upper bound on the condition number of each mixing layer. Kept well
  /// below 20: with two leaky layers a bound of 20 can squeeze a latent
  /// direction under the unit observation noise of the model.
  double max_condition = 4.0;
  /// Standard deviation of the entries of the p x d output embedding; sets
  /// the signal scale against the unit observation variance of the model.
  double embed_scale = 5.0;
  double edge_prob = 0.5;
  double mean_shift = 1.0;
  double var_min = 0.25;
  double var_max = 2.0;
  /// Probability that a moment-shift environment also targets coordinates
  /// other than its primary one.
  double extra_target_prob = 0.0;
  std::size_t rank_retries = 100;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Transition structure: f_iota(z) = alpha z + (1 - alpha) tanh(theta_iota z),
/// f_nu_j(z) = tanh(theta_nu[j] . (z_iota, z_nu)) + shift_j(u).
struct GeneratorSpec {
  std::size_t d_iota = 0;
  std::size_t d_nu = 0;
  std::size_t p = 0;
  double alpha = 0.7;
  Matrix theta_iota;  ///< d_iota x d_iota
  Matrix theta_nu;    ///< d_nu x (d_iota + d_nu), zero outside the parent mask
  Matrix dag_mask;    ///< d_nu x (d_iota + d_nu) in {0, 1}; nu block strictly lower triangular

  std::vector<std::size_t> parents(std::size_t j) const;
};

enum class EnvironmentKind { kBaseline, kMomentShift, kIsolation };

struct Environment {
  std::string id;
  EnvironmentKind kind = EnvironmentKind::kBaseline;
  std::vector<int> targets;  ///< intervention vector u in {0,1}^{d_nu}
  std::vector<double> mean_nu;
  std::vector<double> var_nu;
  std::vector<double> shift;      ///< additive mechanism shift per nu coordinate
  std::vector<bool> isolated;     ///< mechanism replaced by the constant 0
};

/// Innovation moments for every environment. Environment 0 is the baseline.
struct EnvironmentBank {
  std::vector<double> mean_iota;
  std::vector<double> var_iota;
  std::vector<Environment> envs;

  std::size_t d_nu() const { return envs.empty() ? 0 : envs.front().mean_nu.size(); }
  std::size_t index_of(const std::string& id) const;
  void validate() const;
};

/// Injective observation map x = C * lrelu-MLP(z).
struct MixingParams {
  std::vector<Matrix> weights;  ///< square, condition number <= max_condition
  std::vector<Matrix> biases;   ///< 1 x d
  Matrix embed;                 ///< p x d, full column rank

  Matrix apply(const Matrix& z) const;
};

struct Generator {
  GeneratorConfig config;
  GeneratorSpec spec;
  EnvironmentBank bank;
  MixingParams mixing;

  /// Ground-truth transition law p(z^t | z^{t-1}, env) per row of z_prev
  /// (rows are (z_iota, z_nu)); returned as (iota block, nu block).
  std::pair<GaussianBatch, GaussianBatch> transition(const Matrix& z_prev, std::size_t env) const;
};

Generator make_generator(const GeneratorConfig& config);

struct RankCheck {
  std::size_t rank = 0;
  bool pass = false;
  Matrix delta_eta;  ///< stacked natural-parameter differences, 2 d_nu x 2 d_nu
};

/// Stacks delta-eta of the first 2 d_nu moment-shift environments and
/// returns the numerical rank (singular values > 1e-8 * largest).
RankCheck check_rank_condition(const EnvironmentBank& bank);
Matrix natural_parameter_difference(const EnvironmentBank& bank, std::size_t env);
std::size_t numerical_rank(const Matrix& m, double rel_tol = 1e-8);

struct Snapshot {
  Matrix latent;        ///< N x (d_iota + d_nu)
  Matrix observation;   ///< N x p
  std::vector<std::size_t> trajectory;  ///< trajectory id of each row
};

struct TrajectoryBundle {
  std::vector<std::string> env_ids;
  int T = 0;
  bool unpaired = false;
  /// snapshots[env][t]
  std::vector<std::vector<Snapshot>> snapshots;
};

/// Rolls N trajectories per environment forward T steps.
TrajectoryBundle sample_trajectories(const Generator& gen, std::size_t n_per_env, int T,
                                     std::uint64_t seed, bool unpaired);

/// Writes snapshot.csv, conditions.json, latents_truth/<env>_t<k>.csv and
/// manifest.json into `dir`.
void export_dataset(const Generator& gen, const TrajectoryBundle& bundle,
                    const std::filesystem::path& dir, std::uint64_t sample_seed);

std::string generator_config_json(const GeneratorConfig& config);
GeneratorConfig generator_config_from_json(const std::string& text);

/// Latent column headers: z_iota_1.., z_nu_1..
std::vector<std::string> latent_header(std::size_t d_iota, std::size_t d_nu);

}  // namespace cdyn
