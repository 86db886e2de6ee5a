#include "cdyn/synthgen.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "cdyn/dataset.hpp"
#include "cdyn/rng.hpp"

namespace cdyn {

namespace {

using EigenMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

EigenMat to_eigen(const Matrix& m) {
  EigenMat e(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) e(r, c) = m(r, c);
  return e;
}

Matrix from_eigen(const EigenMat& e) {
  Matrix m(e.rows(), e.cols());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) m(r, c) = e(r, c);
  return m;
}

double spectral_norm(const Matrix& m) {
  if (m.empty()) return 0.0;
  Eigen::JacobiSVD<EigenMat> svd(to_eigen(m));
  return svd.singularValues()(0);
}

// Square matrix with singular values clamped to [s_max / max_cond, s_max], s_max = 1.
Matrix well_conditioned(Rng& rng, std::size_t d, double max_cond) {
  EigenMat w = to_eigen(rng.normal_matrix(d, d));
  Eigen::JacobiSVD<EigenMat> svd(w, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::VectorXd s = svd.singularValues();
  const double smax = s(0);
  for (Eigen::Index k = 0; k < s.size(); ++k) s(k) = std::max(s(k), smax / max_cond) / smax;
  return from_eigen(svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose());
}

double lrelu(double x) { return x > 0.0 ? x : 0.2 * x; }

}  // namespace

void GeneratorConfig::validate() const {
  if (d_iota < 1 || d_nu < 1) throw ValidationError("generator: d_iota and d_nu must be >= 1");
  if (p < d_iota + d_nu) throw ValidationError("generator: p must be >= d_iota + d_nu");
  if (T < 1) throw ValidationError("generator: T must be >= 1");
  if (cells < 1) throw ValidationError("generator: cells must be >= 1");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValidationError("generator: alpha must lie in [0, 1]");
  if (mixing_depth < 1) throw ValidationError("generator: mixing depth must be >= 1");
  if (!(max_condition >= 1.0 && max_condition <= 20.0)) {
    throw ValidationError("generator: max condition must lie in [1, 20]");
  }
  if (!(embed_scale > 0.0)) throw ValidationError("generator: embed scale must be positive");
  if (!(var_min > 0.0 && var_max >= var_min)) throw ValidationError("generator: bad variance range");
}

std::vector<std::size_t> GeneratorSpec::parents(std::size_t j) const {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < dag_mask.cols(); ++k) {
    if (dag_mask(j, k) != 0.0) out.push_back(k);
  }
  return out;
}

std::size_t EnvironmentBank::index_of(const std::string& id) const {
  for (std::size_t i = 0; i < envs.size(); ++i) {
    if (envs[i].id == id) return i;
  }
  throw ValidationError("environment bank: unknown environment '" + id + "'");
}

void EnvironmentBank::validate() const {
  if (envs.empty()) throw ValidationError("environment bank: no environments");
  const auto& base = envs.front();
  for (int u : base.targets) {
    if (u != 0) throw ValidationError("environment bank: baseline must have u = 0");
  }
  const std::size_t dn = base.mean_nu.size();
  for (const auto& e : envs) {
    if (e.mean_nu.size() != dn || e.var_nu.size() != dn || e.targets.size() != dn ||
        e.shift.size() != dn || e.isolated.size() != dn) {
      throw ValidationError("environment bank: environment '" + e.id + "' has wrong dimensions");
    }
  }
  if (mean_iota.size() != var_iota.size()) throw ValidationError("environment bank: iota moments");
}

Matrix MixingParams::apply(const Matrix& z) const {
  Matrix h = z;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    h = matmul_nt(h, weights[l]);
    for (std::size_t r = 0; r < h.rows(); ++r)
      for (std::size_t c = 0; c < h.cols(); ++c) h(r, c) = lrelu(h(r, c) + biases[l](0, c));
  }
  return matmul_nt(h, embed);
}

std::pair<GaussianBatch, GaussianBatch> Generator::transition(const Matrix& z_prev,
                                                              std::size_t env_index) const {
  const std::size_t di = spec.d_iota, dn = spec.d_nu;
  if (z_prev.cols() != di + dn) throw ValidationError("generator transition: latent width mismatch");
  if (env_index >= bank.envs.size()) throw ValidationError("generator transition: unknown environment");
  const Environment& env = bank.envs[env_index];
  const std::size_t n = z_prev.rows();
  GaussianBatch iota{Matrix(n, di), Matrix(n, di)};
  GaussianBatch nu{Matrix(n, dn), Matrix(n, dn)};
  for (std::size_t r = 0; r < n; ++r) {
    auto z = z_prev.row_span(r);
    for (std::size_t i = 0; i < di; ++i) {
      double lin = 0.0;
      for (std::size_t k = 0; k < di; ++k) lin += spec.theta_iota(i, k) * z[k];
      iota.mean(r, i) = spec.alpha * z[i] + (1.0 - spec.alpha) * std::tanh(lin) + bank.mean_iota[i];
      iota.logvar(r, i) = std::log(bank.var_iota[i]);
    }
    for (std::size_t j = 0; j < dn; ++j) {
      double drift = 0.0;
      if (!env.isolated[j]) {
        double lin = 0.0;
        for (std::size_t k = 0; k < di + dn; ++k) lin += spec.theta_nu(j, k) * z[k];
        drift = std::tanh(lin) + env.shift[j];
      }
      nu.mean(r, j) = drift + env.mean_nu[j];
      nu.logvar(r, j) = std::log(env.var_nu[j]);
    }
  }
  return {std::move(iota), std::move(nu)};
}

Matrix natural_parameter_difference(const EnvironmentBank& bank, std::size_t env) {
  const auto& base = bank.envs.front();
  const auto& e = bank.envs.at(env);
  const std::size_t dn = base.mean_nu.size();
  Matrix eta(1, 2 * dn);
  for (std::size_t i = 0; i < dn; ++i) {
    eta(0, i) = e.mean_nu[i] / e.var_nu[i] - base.mean_nu[i] / base.var_nu[i];
    eta(0, dn + i) = -0.5 * (1.0 / e.var_nu[i] - 1.0 / base.var_nu[i]);
  }
  return eta;
}

std::size_t numerical_rank(const Matrix& m, double rel_tol) {
  if (m.empty()) return 0;
  Eigen::JacobiSVD<EigenMat> svd(to_eigen(m));
  const auto& s = svd.singularValues();
  if (s.size() == 0 || s(0) == 0.0) return 0;
  std::size_t rank = 0;
  for (Eigen::Index k = 0; k < s.size(); ++k) {
    if (s(k) > rel_tol * s(0)) ++rank;
  }
  return rank;
}

RankCheck check_rank_condition(const EnvironmentBank& bank) {
  bank.validate();
  const std::size_t dn = bank.d_nu();
  std::vector<Matrix> rows;
  for (std::size_t e = 1; e < bank.envs.size() && rows.size() < 2 * dn; ++e) {
    if (bank.envs[e].kind == EnvironmentKind::kMomentShift) {
      rows.push_back(natural_parameter_difference(bank, e));
    }
  }
  if (rows.size() < 2 * dn) {
    throw ValidationError("rank check: need " + std::to_string(2 * dn) +
                          " moment-shift environments, found " + std::to_string(rows.size()));
  }
  RankCheck out;
  out.delta_eta = vstack(rows);
  out.rank = numerical_rank(out.delta_eta);
  out.pass = out.rank == 2 * dn;
  return out;
}

Generator make_generator(const GeneratorConfig& config) {
  config.validate();
  Rng rng(config.seed);
  const std::size_t di = config.d_iota, dn = config.d_nu, d = di + dn;

  Generator gen;
  gen.config = config;
  GeneratorSpec& spec = gen.spec;
  spec.d_iota = di;
  spec.d_nu = dn;
  spec.p = config.p;
  spec.alpha = config.alpha;

  spec.theta_iota = rng.normal_matrix(di, di);
  if (const double s = spectral_norm(spec.theta_iota); s > 0.0) {
    for (double& v : spec.theta_iota.data()) v *= 0.9 / s;
  }

  spec.dag_mask = Matrix(dn, d);
  for (std::size_t j = 0; j < dn; ++j) {
    bool any = false;
    for (std::size_t k = 0; k < di + j; ++k) {
      if (rng.bernoulli(config.edge_prob)) {
        spec.dag_mask(j, k) = 1.0;
        any = true;
      }
    }
    if (!any) spec.dag_mask(j, rng.index(di + j)) = 1.0;
  }
  spec.theta_nu = Matrix(dn, d);
  for (std::size_t j = 0; j < dn; ++j) {
    for (std::size_t k = 0; k < d; ++k) {
      if (spec.dag_mask(j, k) != 0.0) {
        const double mag = rng.uniform(0.5, 1.0);
        spec.theta_nu(j, k) = rng.bernoulli(0.5) ? mag : -mag;
      }
    }
  }
  // Linearized transition at the origin must be a contraction. When the
  // invariant drift alone is not (alpha near 1), only the responsive rows
  // are bounded.
  Matrix lin_iota(di, di);
  for (std::size_t i = 0; i < di; ++i)
    for (std::size_t k = 0; k < di; ++k)
      lin_iota(i, k) = (i == k ? config.alpha : 0.0) + (1.0 - config.alpha) * spec.theta_iota(i, k);
  const bool iota_contracts = spectral_norm(lin_iota) < 0.99;
  for (;;) {
    Matrix lin(d, d);
    for (std::size_t i = 0; i < di; ++i)
      for (std::size_t k = 0; k < di; ++k) lin(i, k) = lin_iota(i, k);
    for (std::size_t j = 0; j < dn; ++j)
      for (std::size_t k = 0; k < d; ++k) lin(di + j, k) = spec.theta_nu(j, k);
    if (spectral_norm(iota_contracts ? lin : spec.theta_nu) < 0.99) break;
    for (double& v : spec.theta_nu.data()) v *= 0.9;
  }

  // Environments.
  EnvironmentBank& bank = gen.bank;
  bank.mean_iota.assign(di, 0.0);
  bank.var_iota.assign(di, 1.0);
  Environment base;
  base.id = "ctrl";
  base.kind = EnvironmentKind::kBaseline;
  base.targets.assign(dn, 0);
  base.mean_nu.assign(dn, 0.0);
  base.var_nu.assign(dn, 1.0);
  base.shift.assign(dn, 0.0);
  base.isolated.assign(dn, false);

  std::size_t attempt = 0;
  for (;; ++attempt) {
    if (attempt == config.rank_retries) {
      throw NumericError("generator: rank condition unsatisfied after " +
                         std::to_string(config.rank_retries) + " resamples");
    }
    bank.envs.assign(1, base);
    for (std::size_t k = 0; k < 2 * dn; ++k) {
      Environment e = base;
      e.id = "shift" + std::to_string(k + 1);
      e.kind = EnvironmentKind::kMomentShift;
      for (std::size_t i = 0; i < dn; ++i) {
        const bool primary = i == k % dn;
        if (primary || rng.bernoulli(config.extra_target_prob)) {
          e.targets[i] = 1;
          e.mean_nu[i] = rng.uniform(-config.mean_shift, config.mean_shift);
          e.var_nu[i] = rng.uniform(config.var_min, config.var_max);
        }
      }
      bank.envs.push_back(std::move(e));
    }
    if (check_rank_condition(bank).pass) break;
  }
  for (std::size_t j = 0; j < dn; ++j) {
    Environment e = base;
    e.id = "iso" + std::to_string(j + 1);
    e.kind = EnvironmentKind::kIsolation;
    e.targets[j] = 1;
    e.isolated[j] = true;
    bank.envs.push_back(std::move(e));
  }

  // Mixing.
  for (std::size_t l = 0; l < config.mixing_depth; ++l) {
    gen.mixing.weights.push_back(well_conditioned(rng, d, config.max_condition));
    gen.mixing.biases.push_back(rng.normal_matrix(1, d, 0.1));
  }
  for (;;) {
    gen.mixing.embed = rng.normal_matrix(config.p, d, config.embed_scale);
    if (numerical_rank(gen.mixing.embed, 1e-6) == d) break;
  }
  return gen;
}

TrajectoryBundle sample_trajectories(const Generator& gen, std::size_t n_per_env, int T,
                                     std::uint64_t seed, bool unpaired) {
  if (T < 0) throw ValidationError("sample_trajectories: negative T");
  gen.bank.validate();
  const std::size_t di = gen.spec.d_iota, dn = gen.spec.d_nu, d = di + dn;
  const Environment& base = gen.bank.envs.front();

  TrajectoryBundle bundle;
  bundle.T = T;
  bundle.unpaired = unpaired;
  for (std::size_t e = 0; e < gen.bank.envs.size(); ++e) {
    const Environment& env = gen.bank.envs[e];
    bundle.env_ids.push_back(env.id);
    Rng rng(derive_seed(seed, e));
    // Separate stream so shuffling leaves the dynamics untouched.
    Rng perm_rng(derive_seed(derive_seed(seed, e), 0x5348u));
    Matrix z(n_per_env, d);
    for (std::size_t r = 0; r < n_per_env; ++r) {
      for (std::size_t i = 0; i < di; ++i)
        z(r, i) = gen.bank.mean_iota[i] + std::sqrt(gen.bank.var_iota[i]) * rng.normal();
      for (std::size_t j = 0; j < dn; ++j)
        z(r, di + j) = base.mean_nu[j] + std::sqrt(base.var_nu[j]) * rng.normal();
    }
    std::vector<Snapshot> series;
    std::vector<std::size_t> ids(n_per_env);
    for (std::size_t r = 0; r < n_per_env; ++r) ids[r] = r;
    for (int t = 0; t <= T; ++t) {
      if (t > 0) {
        Matrix next(n_per_env, d);
        for (std::size_t r = 0; r < n_per_env; ++r) {
          auto prev = z.row_span(r);
          for (std::size_t i = 0; i < di; ++i) {
            double lin = 0.0;
            for (std::size_t k = 0; k < di; ++k) lin += gen.spec.theta_iota(i, k) * prev[k];
            next(r, i) = gen.spec.alpha * prev[i] + (1.0 - gen.spec.alpha) * std::tanh(lin) +
                         gen.bank.mean_iota[i] + std::sqrt(gen.bank.var_iota[i]) * rng.normal();
          }
          for (std::size_t j = 0; j < dn; ++j) {
            double drift = 0.0;
            if (!env.isolated[j]) {
              double lin = 0.0;
              for (std::size_t k = 0; k < d; ++k) lin += gen.spec.theta_nu(j, k) * prev[k];
              drift = std::tanh(lin) + env.shift[j];
            }
            next(r, di + j) = drift + env.mean_nu[j] + std::sqrt(env.var_nu[j]) * rng.normal();
          }
        }
        z = std::move(next);
      }
      Snapshot snap{z, gen.mixing.apply(z), ids};
      if (unpaired) {
        const auto perm = perm_rng.permutation(n_per_env);
        snap.latent = snap.latent.select_rows(perm);
        snap.observation = snap.observation.select_rows(perm);
        for (std::size_t r = 0; r < n_per_env; ++r) snap.trajectory[r] = ids[perm[r]];
      }
      series.push_back(std::move(snap));
    }
    bundle.snapshots.push_back(std::move(series));
  }
  return bundle;
}

std::vector<std::string> latent_header(std::size_t d_iota, std::size_t d_nu) {
  std::vector<std::string> h;
  for (std::size_t i = 0; i < d_iota; ++i) h.push_back("z_iota_" + std::to_string(i + 1));
  for (std::size_t j = 0; j < d_nu; ++j) h.push_back("z_nu_" + std::to_string(j + 1));
  return h;
}

std::string generator_config_json(const GeneratorConfig& c) {
  nlohmann::json j = {{"d_iota", c.d_iota},
                      {"d_nu", c.d_nu},
                      {"p", c.p},
                      {"T", c.T},
                      {"cells", c.cells},
                      {"alpha", c.alpha},
                      {"mixing_depth", c.mixing_depth},
                      {"max_condition", c.max_condition},
                      {"embed_scale", c.embed_scale},
                      {"edge_prob", c.edge_prob},
                      {"mean_shift", c.mean_shift},
                      {"var_min", c.var_min},
                      {"var_max", c.var_max},
                      {"extra_target_prob", c.extra_target_prob},
                      {"rank_retries", c.rank_retries},
                      {"seed", c.seed}};
  return j.dump();
}

GeneratorConfig generator_config_from_json(const std::string& text) {
  GeneratorConfig c;
  try {
    auto j = nlohmann::json::parse(text);
    c.d_iota = j.value("d_iota", c.d_iota);
    c.d_nu = j.value("d_nu", c.d_nu);
    c.p = j.value("p", c.p);
    c.T = j.value("T", c.T);
    c.cells = j.value("cells", c.cells);
    c.alpha = j.value("alpha", c.alpha);
    c.mixing_depth = j.value("mixing_depth", c.mixing_depth);
    c.max_condition = j.value("max_condition", c.max_condition);
    c.embed_scale = j.value("embed_scale", c.embed_scale);
    c.edge_prob = j.value("edge_prob", c.edge_prob);
    c.mean_shift = j.value("mean_shift", c.mean_shift);
    c.var_min = j.value("var_min", c.var_min);
    c.var_max = j.value("var_max", c.var_max);
    c.extra_target_prob = j.value("extra_target_prob", c.extra_target_prob);
    c.rank_retries = j.value("rank_retries", c.rank_retries);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("generator config: ") + e.what());
  }
  c.validate();
  return c;
}

void export_dataset(const Generator& gen, const TrajectoryBundle& bundle,
                    const std::filesystem::path& dir, std::uint64_t sample_seed) {
  std::filesystem::create_directories(dir / "latents_truth");
  const std::size_t dn = gen.spec.d_nu;

  SnapshotDataset ds;
  ds.mode = ExpressionMode::kNormalized;
  for (std::size_t g = 0; g < gen.spec.p; ++g) ds.genes.push_back("g" + std::to_string(g + 1));
  for (const auto& env : gen.bank.envs) {
    ConditionInfo info;
    info.id = env.id;
    info.is_control = env.kind == EnvironmentKind::kBaseline;
    for (std::size_t j = 0; j < dn; ++j) {
      if (env.targets[j] != 0) info.targets.push_back("nu" + std::to_string(j + 1));
    }
    ds.conditions.push_back(std::move(info));
  }
  std::vector<Matrix> blocks;
  for (std::size_t e = 0; e < bundle.snapshots.size(); ++e) {
    for (int t = 0; t <= bundle.T; ++t) {
      const Snapshot& s = bundle.snapshots[e][static_cast<std::size_t>(t)];
      for (std::size_t r = 0; r < s.observation.rows(); ++r) {
        ds.cell_ids.push_back(bundle.env_ids[e] + "_t" + std::to_string(t) + "_" +
                              std::to_string(s.trajectory[r]));
        ds.condition.push_back(e);
        ds.time.push_back(t);
      }
      blocks.push_back(s.observation);
      write_matrix_csv(dir / "latents_truth" / (bundle.env_ids[e] + "_t" + std::to_string(t) + ".csv"),
                       latent_header(gen.spec.d_iota, dn), s.latent);
    }
  }
  ds.expression = vstack(blocks);
  save_snapshot_table(ds, dir / "snapshot.csv");

  nlohmann::json manifest;
  manifest["generator"] = nlohmann::json::parse(generator_config_json(gen.config));
  manifest["sample_seed"] = sample_seed;
  manifest["cells_per_snapshot"] = bundle.snapshots.empty() || bundle.snapshots[0].empty()
                                       ? 0
                                       : bundle.snapshots[0][0].observation.rows();
  manifest["T"] = bundle.T;
  manifest["unpaired"] = bundle.unpaired;
  manifest["rank_check"] = {{"rank", check_rank_condition(gen.bank).rank},
                            {"required", 2 * dn}};
  nlohmann::json spec;
  spec["alpha"] = gen.spec.alpha;
  spec["theta_iota"] = gen.spec.theta_iota.values();
  spec["theta_nu"] = gen.spec.theta_nu.values();
  spec["dag_mask"] = gen.spec.dag_mask.values();
  manifest["spec"] = spec;
  nlohmann::json envs = nlohmann::json::array();
  for (const auto& e : gen.bank.envs) {
    std::vector<int> iso(e.isolated.begin(), e.isolated.end());
    envs.push_back({{"id", e.id},
                    {"kind", e.kind == EnvironmentKind::kBaseline      ? "baseline"
                             : e.kind == EnvironmentKind::kMomentShift ? "moment_shift"
                                                                       : "isolation"},
                    {"u", e.targets},
                    {"mean_nu", e.mean_nu},
                    {"var_nu", e.var_nu},
                    {"shift", e.shift},
                    {"isolated", iso}});
  }
  manifest["bank"] = {{"mean_iota", gen.bank.mean_iota}, {"var_iota", gen.bank.var_iota}, {"envs", envs}};
  std::ofstream out(dir / "manifest.json");
  if (!out) throw std::runtime_error("cannot write manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

}  // namespace cdyn
