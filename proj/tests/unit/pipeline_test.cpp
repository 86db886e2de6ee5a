#include <cmath>
#include <filesystem>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "cdyn/config.hpp"
#include "cdyn/dataset.hpp"
#include "cdyn/folds.hpp"
#include "cdyn/pipeline.hpp"
#include "cdyn/predict.hpp"
#include "cdyn/synthgen.hpp"
#include "cdyn/trainer.hpp"

namespace fs = std::filesystem;

namespace cdyn {
namespace {

struct Fixture {
  fs::path dir;
  SnapshotDataset ds;
  std::optional<Matrix> latents;
};

// Small generated dataset: 10 environments, T = 2, 60 cells each.
const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture out;
    out.dir = fs::temp_directory_path() / "cdyn_pipeline_fixture";
    fs::remove_all(out.dir);
    GeneratorConfig cfg;
    cfg.cells = 60;
    cfg.T = 2;
    cfg.p = 10;
    const Generator gen = make_generator(cfg);
    export_dataset(gen, sample_trajectories(gen, cfg.cells, cfg.T, 3, false), out.dir, 3);
    out.ds = load_dataset(out.dir);
    out.latents = load_latent_truth(out.dir, out.ds);
    return out;
  }();
  return f;
}

ProbeOptions quick_probe() {
  ProbeOptions p;
  p.epochs = 20;
  p.max_rows = 500;
  return p;
}

TEST(Evaluate, PassthroughIsPerfect) {
  const Fixture& f = fixture();
  FoldOptions o;
  o.K = 3;
  const auto folds = build_loo_folds(f.ds, o);
  TablePredictor pass(f.ds);
  const EvaluationReport r = evaluate_folds(f.ds, folds, pass, std::nullopt, 2, quick_probe());
  ASSERT_EQ(r.folds.size(), folds.size());
  EXPECT_FALSE(r.has_recovery);
  for (const auto& fold : r.folds) {
    EXPECT_DOUBLE_EQ(fold.metrics.at("mae"), 0.0) << fold.held_out;
    EXPECT_NEAR(fold.metrics.at("delta_pearson"), 1.0, 1e-12) << fold.held_out;
    EXPECT_DOUBLE_EQ(fold.metrics.at("auc"), 1.0) << fold.held_out;
    EXPECT_DOUBLE_EQ(fold.metrics.at("rmse"), 0.0) << fold.held_out;
  }
  EXPECT_NEAR(r.pooled.at("pseudobulk_r2"), 1.0, 1e-12);
}

TEST(Evaluate, CsvHasOneRowPerFoldAndMetric) {
  const Fixture& f = fixture();
  const auto folds = build_loo_folds(f.ds, {});
  TablePredictor pass(f.ds);
  const EvaluationReport r = evaluate_folds(f.ds, folds, pass, std::nullopt, 2, quick_probe());
  std::istringstream csv(r.to_csv());
  std::string line;
  std::size_t rows = 0;
  std::getline(csv, line);
  EXPECT_EQ(line, "fold,metric,value");
  while (std::getline(csv, line))
    if (!line.empty()) ++rows;
  EXPECT_GE(rows, folds.size() * perturb_metric_names().size());
}

TEST(Evaluate, TrainedModelReportsRecovery) {
  const Fixture& f = fixture();
  FoldOptions o;
  const auto all = build_loo_folds(f.ds, o);
  const std::vector<FoldSpec> folds(all.begin(), all.begin() + 1);
  RunConfig cfg;
  cfg.epochs = 1;
  cfg.hidden = 16;
  cfg.batch_size = 64;
  std::map<std::string, ModelParams> models;
  models.emplace(folds[0].held_out, train_model(f.ds, folds[0].training, cfg).params);
  ModelPredictor pred(models, 7);
  const EvaluationReport r = evaluate_folds(f.ds, folds, pred, f.latents, 2, quick_probe());
  ASSERT_TRUE(r.has_recovery);
  for (const auto& name : recovery_metric_names()) {
    ASSERT_TRUE(r.folds[0].metrics.count(name)) << name;
    EXPECT_TRUE(std::isfinite(r.folds[0].metrics.at(name))) << name;
  }
  // The held-out condition is unseen, so a fallback embedding is used.
  EXPECT_TRUE(r.folds[0].fallback);
}

TEST(Train, AblatingBothLeavesTheElbo) {
  const Fixture& f = fixture();
  RunConfig cfg = apply_ablation(RunConfig{}, Ablation::kBoth);
  cfg.epochs = 1;
  cfg.hidden = 8;
  cfg.batch_size = 64;
  std::vector<std::string> training;
  for (const auto& c : f.ds.conditions) training.push_back(c.id);
  std::size_t steps = 0;
  train_model(f.ds, training, cfg, nullptr, [&](std::size_t, std::size_t, const LossReport& r) {
    ++steps;
    EXPECT_EQ(r.total, r.neg_elbo);
  });
  EXPECT_GT(steps, 0u);
}

TEST(Train, SameSeedIsBitIdentical) {
  const Fixture& f = fixture();
  RunConfig cfg;
  cfg.epochs = 1;
  cfg.hidden = 8;
  cfg.batch_size = 64;
  cfg.seed = 4;
  const std::vector<std::string> training{f.ds.conditions[0].id, f.ds.conditions[1].id, f.ds.conditions[2].id};
  std::ostringstream a, b;
  const TrainResult ra = train_model(f.ds, training, cfg, &a);
  const TrainResult rb = train_model(f.ds, training, cfg, &b);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_EQ(ra.params.to_json(), rb.params.to_json());
}

TEST(Ablation, ParsesAndZeroesWeights) {
  EXPECT_EQ(parse_ablation("alignment"), Ablation::kAlignment);
  EXPECT_THROW(parse_ablation("everything"), ValidationError);
  const RunConfig c = apply_ablation(RunConfig{}, Ablation::kSparsity);
  EXPECT_EQ(c.lambda_reg, 0.0);
  EXPECT_EQ(c.lambda_align, 1.0);
}

TEST(Predict, RolloutShapesAndDeterminism) {
  const Fixture& f = fixture();
  RunConfig cfg;
  cfg.epochs = 1;
  cfg.hidden = 8;
  const std::vector<std::string> training{f.ds.conditions[0].id, f.ds.conditions[1].id};
  const ModelParams m = train_model(f.ds, training, cfg).params;
  const Matrix x0 = f.ds.group(0, 0);
  const Rollout a = rollout(m, x0, training[1], 0, 2, 5), b = rollout(m, x0, training[1], 0, 2, 5);
  ASSERT_EQ(a.x.size(), 2u);
  EXPECT_EQ(a.times, (std::vector<int>{1, 2}));
  EXPECT_EQ(a.x[1].rows(), x0.rows());
  EXPECT_EQ(a.x[1].cols(), x0.cols());
  EXPECT_EQ(a.x[1], b.x[1]);
  EXPECT_THROW(rollout(m, x0, training[1], 0, 0, 5), ValidationError);
  const ConditionResolution res = resolve_condition(m, f.ds, f.ds.conditions[5].id);
  EXPECT_TRUE(res.fallback);
}

TEST(Gradcheck, SmallRunPasses) {
  GradcheckOptions o;
  o.trials = 3;
  const GradcheckSummary s = run_gradcheck(o);
  EXPECT_EQ(s.trials.size(), 3u);
  EXPECT_TRUE(s.pass) << s.worst;
  EXPECT_LE(s.worst, 1e-4);
}

TEST(Diagnose, GeneratorInvariantBlockVanishes) {
  GeneratorConfig cfg;
  cfg.cells = 50;
  cfg.T = 2;
  const Generator gen = make_generator(cfg);
  const DiagnoseReport r = diagnose_generator(gen, sample_trajectories(gen, 50, 2, 1, false));
  ASSERT_FALSE(r.environments.empty());
  for (const auto& e : r.environments) {
    EXPECT_LE(e.mean_norm_iota, 1e-12) << e.condition;
    EXPECT_GT(e.mean_norm_nu, 0.0) << e.condition;
  }
}

TEST(Diagnose, TrainedModelReportsRatio) {
  const Fixture& f = fixture();
  RunConfig cfg;
  cfg.epochs = 1;
  cfg.hidden = 8;
  std::vector<std::string> training;
  for (const auto& c : f.ds.conditions) training.push_back(c.id);
  const ModelParams m = train_model(f.ds, training, cfg).params;
  const DiagnoseReport r = diagnose_model(m, f.ds, 100, 1);
  EXPECT_EQ(r.environments.size(), training.size() - 1);
  EXPECT_TRUE(std::isfinite(r.ratio));
  EXPECT_GE(r.ratio, 0.0);
}

}  // namespace
}  // namespace cdyn
