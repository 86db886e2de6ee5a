#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cdyn/gaussian.hpp"
#include "cdyn/matrix.hpp"
#include "cdyn/tape.hpp"

namespace cdyn {

/// Dimensions and condition vocabulary of a model.
struct ModelConfig {
  std::size_t d_iota = 2;
  std::size_t d_nu = 3;
  std::size_t p = 20;
  std::size_t d_u = 8;
  std::size_t hidden = 64;
  std::size_t target_embed = 4;
  /// Largest time index; time is fed to the responsive encoder as t / T.
  int T = 5;
  std::vector<std::string> conditions;

  std::size_t latent_dim() const { return d_iota + d_nu; }
  void validate() const;
};

struct ParamBlock {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const { return rows * cols; }
};

/// Every learnable parameter of the model, stored as one flat vector with a
/// table of named blocks. The flat vector is what the optimizer and the tape
/// see; names exist for serialization and tests.
///
/// Networks are MLPs with two tanh hidden layers, blocks `<net>.w0 .b0 .w1
/// .b1 .w2 .b2`:
///   enc_iota   x                               -> (mean, logvar) of z_iota
///   enc_nu     (x, e(u), t/T)                  -> (mean, logvar) of z_nu
///   dec        z                               -> mean of x
///   trans_iota z_iota^{t-1}                    -> (mean, logvar) of z_iota^t
///   trans_nu   (W(u)_j * z_nu^{t-1}, z_iota^{t-1}, e(u), target_j) -> (mean_j, logvar_j)
/// plus `embed.cond` (conditions x d_u), `embed.target` (d_nu x target_embed),
/// `adj.base` (d_nu x d_nu) and `adj.mod` (d_u x d_nu^2).
class ModelParams {
 public:
  /// Parameters drawn with a seeded scaled-normal initializer.
  static ModelParams initialize(const ModelConfig& config, std::uint64_t seed);
  /// All parameters zero.
  static ModelParams zeros(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  const std::vector<ParamBlock>& blocks() const { return blocks_; }
  const ParamBlock& block(std::string_view name) const;
  bool has_block(std::string_view name) const;

  Matrix get(std::string_view name) const;
  void set(std::string_view name, const Matrix& value);

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  std::size_t size() const { return values_.size(); }

  /// Row index of a condition in the embedding table; throws on unknown ids.
  std::size_t condition_index(std::string_view id) const;
  bool has_condition(std::string_view id) const;

  std::string to_json() const;
  static ModelParams from_json(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static ModelParams load(const std::filesystem::path& path);

  friend bool operator==(const ModelParams& a, const ModelParams& b);

 private:
  explicit ModelParams(const ModelConfig& config);
  void add_block(std::string name, std::size_t rows, std::size_t cols);
  void add_mlp(const std::string& prefix, std::size_t in, std::size_t out);

  ModelConfig config_;
  std::vector<ParamBlock> blocks_;
  std::map<std::string, std::size_t, std::less<>> index_;
  std::vector<double> values_;
};

/// (mean, logvar) node pair on a tape, B x d each.
struct GaussianVars {
  Var mean;
  Var logvar;
};

struct TransitionVars {
  GaussianVars iota;
  GaussianVars nu;
};

/// Records model computations on a tape. Parameter leaves are created once
/// per block and reused across calls, so one graph can run the encoder on
/// several batches.
class ModelGraph {
 public:
  ModelGraph(Tape& tape, const ModelParams& params);

  Tape& tape() { return tape_; }
  const ModelParams& params() const { return params_; }

  Var param(std::string_view name);
  Var input(const Matrix& x) { return tape_.constant(x); }

  GaussianVars encode_invariant(Var x);
  GaussianVars encode_responsive(Var x, std::size_t condition, int time_index);
  Var decode(Var z);
  /// Flattened W(u), 1 x d_nu^2 row-major.
  Var adjacency(std::size_t condition);
  TransitionVars transition_prior(Var z_iota_prev, Var z_nu_prev, std::size_t condition);

  Var sample(const GaussianVars& q, const Matrix& noise);
  /// Sum over all entries of the elementwise KL(q || p).
  Var kl_sum(const GaussianVars& q, const GaussianVars& p);
  /// z = (z_iota, z_nu) column concatenation.
  Var join(Var z_iota, Var z_nu);

 private:
  Var mlp(std::string_view prefix, Var input);
  Var embedding(std::size_t condition);
  Var rows_of(Var row, std::size_t rows);
  GaussianVars split_gaussian(Var out, std::size_t d);

  Tape& tape_;
  const ModelParams& params_;
  std::map<std::string, Var, std::less<>> cache_;
};

/// Batch evaluation without gradients.
GaussianBatch encode_invariant(const ModelParams& params, const Matrix& x);
GaussianBatch encode_responsive(const ModelParams& params, const Matrix& x,
                                std::string_view condition, int time_index);
Matrix decode(const ModelParams& params, const Matrix& z);
/// Strictly lower-triangular d_nu x d_nu gate matrix of a condition.
Matrix build_condition_adjacency(const ModelParams& params, std::string_view condition);

struct TransitionBatch {
  GaussianBatch iota;
  GaussianBatch nu;
};
TransitionBatch transition_prior(const ModelParams& params, const Matrix& z_iota_prev,
                                 const Matrix& z_nu_prev, std::string_view condition);

/// Single-vector conveniences.
GaussianDiag encode_invariant(const ModelParams& params, std::span<const double> x);
GaussianDiag encode_responsive(const ModelParams& params, std::span<const double> x,
                               std::string_view condition, int time_index);
std::vector<double> decode(const ModelParams& params, std::span<const double> z_iota,
                           std::span<const double> z_nu);

struct ScoreDiff {
  std::vector<double> iota;
  std::vector<double> nu;
};

/// Difference of transition scores between environment `condition` and
/// `baseline` at z_t given z_prev, split into invariant/responsive blocks.
ScoreDiff transition_score_diff(const ModelParams& params, std::span<const double> z_t_iota,
                                std::span<const double> z_t_nu,
                                std::span<const double> z_prev_iota,
                                std::span<const double> z_prev_nu, std::string_view condition,
                                std::string_view baseline);

}  // namespace cdyn
