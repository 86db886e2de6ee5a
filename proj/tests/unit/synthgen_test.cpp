#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "cdyn/dataset.hpp"
#include "cdyn/metrics.hpp"
#include "cdyn/pipeline.hpp"
#include "cdyn/rng.hpp"
#include "cdyn/synthgen.hpp"

namespace cdyn {
namespace {

namespace fs = std::filesystem;

fs::path temp_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("cdyn_synthgen_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// Row echelon rank with partial pivoting; independent of the SVD path.
std::size_t elimination_rank(Matrix m, double tol = 1e-9) {
  std::size_t rank = 0;
  for (std::size_t c = 0; c < m.cols() && rank < m.rows(); ++c) {
    std::size_t piv = rank;
    for (std::size_t r = rank; r < m.rows(); ++r)
      if (std::abs(m(r, c)) > std::abs(m(piv, c))) piv = r;
    if (std::abs(m(piv, c)) <= tol) continue;
    for (std::size_t k = 0; k < m.cols(); ++k) std::swap(m(rank, k), m(piv, k));
    for (std::size_t r = rank + 1; r < m.rows(); ++r) {
      const double f = m(r, c) / m(rank, c);
      for (std::size_t k = c; k < m.cols(); ++k) m(r, k) -= f * m(rank, k);
    }
    ++rank;
  }
  return rank;
}

Environment shift_env(std::string id, std::size_t dn, std::vector<double> mean, std::vector<double> var) {
  Environment e;
  e.id = std::move(id);
  e.kind = EnvironmentKind::kMomentShift;
  e.targets.assign(dn, 0);
  e.targets[0] = 1;
  e.mean_nu = std::move(mean);
  e.var_nu = std::move(var);
  e.shift.assign(dn, 0.0);
  e.isolated.assign(dn, false);
  return e;
}

EnvironmentBank bank_from(const std::vector<std::vector<double>>& deltas, std::size_t dn) {
  // Baseline N(0, 1); environment k has natural parameters shifted by deltas[k].
  EnvironmentBank b;
  b.mean_iota = {0.0};
  b.var_iota = {1.0};
  Environment base = shift_env("ctrl", dn, std::vector<double>(dn, 0.0), std::vector<double>(dn, 1.0));
  base.kind = EnvironmentKind::kBaseline;
  base.targets.assign(dn, 0);
  b.envs.push_back(base);
  for (std::size_t k = 0; k < deltas.size(); ++k) {
    std::vector<double> mean(dn), var(dn);
    for (std::size_t i = 0; i < dn; ++i) {
      const double prec = 1.0 - 2.0 * deltas[k][dn + i];  // -1/(2 var) = -1/2 + delta
      var[i] = 1.0 / prec;
      mean[i] = deltas[k][i] * var[i];
    }
    b.envs.push_back(shift_env("e" + std::to_string(k), dn, mean, var));
  }
  return b;
}

TEST(RankCheck, BasisVectorsPass) {
  const std::size_t dn = 3;
  std::vector<std::vector<double>> deltas;
  for (std::size_t k = 0; k < 2 * dn; ++k) {
    std::vector<double> d(2 * dn, 0.0);
    d[k] = 0.25;
    deltas.push_back(d);
  }
  RankCheck r = check_rank_condition(bank_from(deltas, dn));
  EXPECT_EQ(r.rank, 2 * dn);
  EXPECT_TRUE(r.pass);
  for (std::size_t k = 0; k < 2 * dn; ++k) EXPECT_NEAR(r.delta_eta(k, k), 0.25, 1e-12);
}

TEST(RankCheck, BaselineCopiesFail) {
  std::vector<std::vector<double>> deltas(6, std::vector<double>(6, 0.0));
  RankCheck r = check_rank_condition(bank_from(deltas, 3));
  EXPECT_EQ(r.rank, 0u);
  EXPECT_FALSE(r.pass);
}

TEST(RankCheck, TooFewEnvironmentsThrow) {
  std::vector<std::vector<double>> deltas(4, std::vector<double>(6, 0.1));
  EXPECT_THROW(check_rank_condition(bank_from(deltas, 3)), ValidationError);
}

TEST(RankCheck, MatchesEliminationOracle) {
  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::vector<double>> deltas;
    for (int k = 0; k < 6; ++k) {
      std::vector<double> d(6);
      for (double& v : d) v = rng.uniform(-0.5, 0.5) * 0.5;
      deltas.push_back(d);
    }
    // Every third trial forces a dependent row.
    if (trial % 3 == 0) {
      for (std::size_t i = 0; i < 6; ++i) deltas[5][i] = deltas[0][i] + deltas[1][i];
    }
    RankCheck r = check_rank_condition(bank_from(deltas, 3));
    EXPECT_EQ(r.rank, elimination_rank(r.delta_eta)) << "trial " << trial;
  }
}

TEST(Generator, DefaultBankShape) {
  Generator g = make_generator({});
  const std::size_t dn = g.config.d_nu;
  ASSERT_EQ(g.bank.envs.size(), 1 + 3 * dn);
  EXPECT_EQ(g.bank.envs[0].kind, EnvironmentKind::kBaseline);
  for (std::size_t k = 1; k <= 2 * dn; ++k) EXPECT_EQ(g.bank.envs[k].kind, EnvironmentKind::kMomentShift);
  for (std::size_t k = 2 * dn + 1; k < g.bank.envs.size(); ++k) {
    EXPECT_EQ(g.bank.envs[k].kind, EnvironmentKind::kIsolation);
  }
  EXPECT_TRUE(check_rank_condition(g.bank).pass);
}

TEST(Generator, DagMaskIsStrictlyLowerOnResponsiveBlock) {
  for (std::uint64_t seed = 1; seed < 10; ++seed) {
    GeneratorConfig c;
    c.seed = seed;
    c.edge_prob = 0.9;
    Generator g = make_generator(c);
    const std::size_t di = c.d_iota;
    for (std::size_t j = 0; j < c.d_nu; ++j) {
      for (std::size_t k = 0; k < c.d_nu; ++k) {
        if (k >= j) EXPECT_EQ(g.spec.dag_mask(j, di + k), 0.0);
      }
      EXPECT_FALSE(g.spec.parents(j).empty());
      for (std::size_t k = 0; k < di + c.d_nu; ++k) {
        if (g.spec.dag_mask(j, k) == 0.0) EXPECT_EQ(g.spec.theta_nu(j, k), 0.0);
      }
    }
  }
}

TEST(Generator, SingleResponsiveCoordinateHasInvariantParentsOnly) {
  GeneratorConfig c;
  c.d_nu = 1;
  Generator g = make_generator(c);
  for (std::size_t k : g.spec.parents(0)) EXPECT_LT(k, c.d_iota);
}

TEST(Generator, UnitAlphaIsIdentityDrift) {
  GeneratorConfig c;
  c.alpha = 1.0;
  Generator g = make_generator(c);
  Rng rng(2);
  Matrix z = rng.normal_matrix(5, c.d_iota + c.d_nu);
  auto [iota, nu] = g.transition(z, 0);
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t i = 0; i < c.d_iota; ++i) EXPECT_EQ(iota.mean(r, i), z(r, i) + g.bank.mean_iota[i]);
}

TEST(Generator, MixingIsInjectiveOnRandomPairs) {
  Generator g = make_generator({});
  Rng rng(3);
  const std::size_t d = g.config.d_iota + g.config.d_nu;
  std::size_t checked = 0;
  while (checked < 10000) {
    Matrix a = rng.normal_matrix(1, d);
    Matrix b = a;
    // Mix of far pairs and pairs just above the 1e-3 separation.
    const double scale = checked % 2 == 0 ? 1.0 : 1e-3;
    for (double& v : b.data()) v += scale * rng.normal();
    if (std::sqrt(squared_distance(a.data(), b.data())) < 1e-3) continue;
    Matrix xa = g.mixing.apply(a), xb = g.mixing.apply(b);
    ASSERT_GT(squared_distance(xa.data(), xb.data()), 0.0);
    ++checked;
  }
}

TEST(Generator, RejectsBadConfig) {
  GeneratorConfig c;
  c.max_condition = 50.0;
  EXPECT_THROW(make_generator(c), ValidationError);
  c = {};
  c.p = 3;
  EXPECT_THROW(make_generator(c), ValidationError);
}

TEST(Trajectories, NoiselessFixedPointIsConstant) {
  Generator g = make_generator({});
  g.spec.alpha = 1.0;
  g.spec.theta_iota = Matrix(g.spec.d_iota, g.spec.d_iota);
  g.spec.theta_nu = Matrix(g.spec.d_nu, g.spec.d_iota + g.spec.d_nu);
  for (double& v : g.bank.mean_iota) v = 0.0;
  for (double& v : g.bank.var_iota) v = 0.0;
  for (auto& e : g.bank.envs) {
    for (double& v : e.mean_nu) v = 0.0;
    for (double& v : e.var_nu) v = 0.0;
    for (double& v : e.shift) v = 0.0;
  }
  TrajectoryBundle b = sample_trajectories(g, 20, 4, 9, false);
  for (const auto& env : b.snapshots)
    for (const auto& snap : env) EXPECT_EQ(snap.latent, env.front().latent);
}

TEST(Trajectories, IsolatedCoordinateIgnoresThePast) {
  Generator g = make_generator({});
  const std::size_t di = g.config.d_iota, dn = g.config.d_nu, n = 10000;
  TrajectoryBundle b = sample_trajectories(g, n, 2, 17, false);
  for (std::size_t e = 0; e < g.bank.envs.size(); ++e) {
    const Environment& env = g.bank.envs[e];
    if (env.kind != EnvironmentKind::kIsolation) continue;
    for (std::size_t j = 0; j < dn; ++j) {
      if (!env.isolated[j]) continue;
      const Matrix& prev = b.snapshots[e][1].latent;
      const Matrix& curr = b.snapshots[e][2].latent;
      const std::vector<double> target = curr.column_values(di + j);
      for (std::size_t k = 0; k < di + dn; ++k) {
        const double r = pearson(target, prev.column_values(k)).value;
        EXPECT_LT(std::abs(r), 3.0 / std::sqrt(static_cast<double>(n))) << env.id << " parent " << k;
      }
    }
  }
}

TEST(Trajectories, UnpairedIsAPermutation) {
  Generator g = make_generator({});
  TrajectoryBundle paired = sample_trajectories(g, 50, 3, 4, false);
  TrajectoryBundle shuffled = sample_trajectories(g, 50, 3, 4, true);
  for (std::size_t e = 0; e < paired.snapshots.size(); ++e) {
    for (std::size_t t = 0; t < paired.snapshots[e].size(); ++t) {
      auto rows = [](const Matrix& m) {
        std::vector<std::vector<double>> out;
        for (std::size_t r = 0; r < m.rows(); ++r) out.emplace_back(m.row_span(r).begin(), m.row_span(r).end());
        std::sort(out.begin(), out.end());
        return out;
      };
      EXPECT_EQ(rows(paired.snapshots[e][t].observation), rows(shuffled.snapshots[e][t].observation));
    }
  }
}

TEST(Trajectories, GroundTruthInvariantScoreDiffIsZero) {
  Generator g = make_generator({});
  TrajectoryBundle b = sample_trajectories(g, 200, 3, 4, false);
  DiagnoseReport d = diagnose_generator(g, b);
  ASSERT_EQ(d.environments.size(), g.bank.envs.size() - 1);
  for (const auto& e : d.environments) EXPECT_EQ(e.mean_norm_iota, 0.0) << e.condition;
  EXPECT_GT(d.mean_norm_nu, 0.0);
}

TEST(Export, LoadsBackBitIdentical) {
  GeneratorConfig c;
  c.cells = 30;
  c.T = 2;
  Generator g = make_generator(c);
  TrajectoryBundle b = sample_trajectories(g, c.cells, c.T, 8, false);
  fs::path dir = temp_dir("export");
  export_dataset(g, b, dir, 8);
  SnapshotDataset ds = load_dataset(dir);
  std::size_t di = 0;
  auto lat = load_latent_truth(dir, ds, &di);
  ASSERT_TRUE(lat.has_value());
  EXPECT_EQ(di, c.d_iota);
  // Rows come out grouped by (environment, time) in trajectory order.
  std::size_t row = 0;
  for (std::size_t e = 0; e < b.snapshots.size(); ++e) {
    for (int t = 0; t <= c.T; ++t) {
      const Snapshot& s = b.snapshots[e][t];
      for (std::size_t r = 0; r < s.observation.rows(); ++r, ++row) {
        for (std::size_t k = 0; k < c.p; ++k) ASSERT_EQ(ds.expression(row, k), s.observation(r, k));
        for (std::size_t k = 0; k < s.latent.cols(); ++k) ASSERT_EQ((*lat)(row, k), s.latent(r, k));
      }
    }
  }
  EXPECT_EQ(row, ds.num_cells());
}

TEST(Export, ManifestReplayRegenerates) {
  GeneratorConfig c;
  c.cells = 20;
  c.T = 2;
  c.seed = 5;
  Generator g = make_generator(c);
  fs::path a = temp_dir("replay_a"), b = temp_dir("replay_b");
  export_dataset(g, sample_trajectories(g, c.cells, c.T, 77, false), a, 77);
  const std::string manifest = slurp(a / "manifest.json");
  const auto gpos = manifest.find("\"generator\"");
  ASSERT_NE(gpos, std::string::npos);
  // Rebuild from the recorded generator config and sample seed.
  const GeneratorConfig replay = generator_config_from_json(generator_config_json(c));
  Generator g2 = make_generator(replay);
  export_dataset(g2, sample_trajectories(g2, c.cells, c.T, 77, false), b, 77);
  EXPECT_EQ(slurp(a / "snapshot.csv"), slurp(b / "snapshot.csv"));
  EXPECT_EQ(manifest, slurp(b / "manifest.json"));
}

TEST(Export, ConfigJsonRoundTrip) {
  GeneratorConfig c;
  c.seed = 99;
  c.alpha = 0.55;
  c.embed_scale = 2.5;
  GeneratorConfig d = generator_config_from_json(generator_config_json(c));
  EXPECT_EQ(generator_config_json(c), generator_config_json(d));
}

}  // namespace
}  // namespace cdyn
