#include "cdyn/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "cdyn/gaussian.hpp"
#include "cdyn/metrics.hpp"
#include "cdyn/predict.hpp"
#include "cdyn/rng.hpp"

namespace cdyn {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return kNaN;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double vector_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// Positions of the DE genes (full index space) inside the ascending HVG subset.
std::vector<std::size_t> remap_genes(const std::vector<std::size_t>& de, const std::vector<std::size_t>& hvg) {
  std::vector<std::size_t> out;
  for (std::size_t g : de) {
    auto it = std::lower_bound(hvg.begin(), hvg.end(), g);
    if (it != hvg.end() && *it == g) out.push_back(static_cast<std::size_t>(it - hvg.begin()));
  }
  return out;
}

}  // namespace

const std::vector<std::string>& perturb_metric_names() {
  static const std::vector<std::string> names = {
      "pseudobulk_r2", "rmse",          "mae",          "delta_pearson", "delta_pearson_de",
      "auc",           "auprc",         "auc_fold_de",  "auprc_fold_de"};
  return names;
}

const std::vector<std::string>& recovery_metric_names() {
  static const std::vector<std::string> names = {"mcc_nu", "linear_r2_iota_mean", "linear_r2_iota_min",
                                                 "probe_r2_mean", "probe_spearman_mean"};
  return names;
}

RecoverySummary evaluate_recovery(const Matrix& z_hat, const Matrix& z_true, std::size_t d_iota,
                                  const ProbeOptions& probe) {
  if (z_hat.rows() != z_true.rows() || z_hat.cols() != z_true.cols()) {
    throw ValidationError("recovery: estimated latents " + z_hat.shape_string() + " vs true " +
                          z_true.shape_string());
  }
  if (d_iota == 0 || d_iota >= z_true.cols()) throw ValidationError("recovery: bad invariant block size");
  const std::size_t d = z_true.cols();
  const std::size_t n = z_true.rows();
  RecoverySummary s;
  s.mcc = mcc_nu(z_hat.block(0, d_iota, n, d - d_iota), z_true.block(0, d_iota, n, d - d_iota));
  s.linear = linear_block_fit(z_hat.block(0, 0, n, d_iota), z_true.block(0, 0, n, d_iota), probe.seed);
  s.probe = probe_grounding(z_hat, z_true, probe);
  return s;
}

ModelPredictor::ModelPredictor(std::map<std::string, ModelParams> models, std::uint64_t seed)
    : models_(std::move(models)), seed_(seed) {}

std::map<int, Matrix> ModelPredictor::predict(const FoldSpec& fold, const SnapshotDataset& ds,
                                              const std::vector<int>& times, FoldResult& result) {
  auto it = models_.find(fold.held_out);
  if (it == models_.end()) throw ValidationError("evaluate: no model for fold '" + fold.held_out + "'");
  const ModelParams& params = it->second;
  const std::size_t u = ds.condition_index(fold.held_out);
  int t0 = std::numeric_limits<int>::max();
  for (int t : ds.times())
    if (!ds.cells_of(u, t).empty()) t0 = std::min(t0, t);
  const ConditionResolution res = resolve_condition(params, ds, fold.held_out);
  result.embedding_used = res.used;
  result.fallback = res.fallback;
  std::map<int, Matrix> out;
  if (times.empty()) return out;
  const int horizon = *std::max_element(times.begin(), times.end()) - t0;
  const Rollout r = rollout(params, ds.group(u, t0), res.used, t0, horizon,
                            derive_seed(seed_, std::hash<std::string>{}(fold.held_out)));
  for (std::size_t k = 0; k < r.times.size(); ++k) {
    if (std::find(times.begin(), times.end(), r.times[k]) != times.end()) out[r.times[k]] = r.x[k];
  }
  return out;
}

std::optional<Matrix> ModelPredictor::encode(const FoldSpec& fold, const SnapshotDataset& ds) {
  auto it = models_.find(fold.held_out);
  if (it == models_.end()) return std::nullopt;
  return encode_dataset(it->second, ds);
}

std::map<int, Matrix> TablePredictor::predict(const FoldSpec& fold, const SnapshotDataset& ds,
                                              const std::vector<int>& times, FoldResult& result) {
  std::vector<std::size_t> cols;
  for (const auto& g : ds.genes) {
    auto it = std::find(pred_.genes.begin(), pred_.genes.end(), g);
    if (it == pred_.genes.end()) throw ValidationError("evaluate: predictions lack gene '" + g + "'");
    cols.push_back(static_cast<std::size_t>(it - pred_.genes.begin()));
  }
  const std::size_t u = pred_.condition_index(fold.held_out);
  result.embedding_used = fold.held_out;
  std::map<int, Matrix> out;
  for (int t : times) {
    const Matrix m = pred_.group(u, t).select_cols(cols);
    if (m.rows() == 0) {
      throw ValidationError("evaluate: predictions lack condition '" + fold.held_out + "' at t = " +
                            std::to_string(t));
    }
    out[t] = m;
  }
  return out;
}

EvaluationReport evaluate_folds(const SnapshotDataset& ds, const std::vector<FoldSpec>& folds,
                                FoldPredictor& predictor, const std::optional<Matrix>& latents,
                                std::size_t d_iota, const ProbeOptions& probe) {
  EvaluationReport report;
  report.has_recovery = latents.has_value();
  const std::size_t ctrl = ds.control_index();
  std::vector<Matrix> all_pred, all_obs;
  std::map<std::string, std::vector<double>> pooled_lists;

  for (const FoldSpec& fold : folds) {
    SnapshotDataset subset;
    const bool all_genes = fold.hvg.empty() || fold.hvg.size() == ds.num_genes();
    if (!all_genes) subset = ds.subset_genes(fold.hvg);
    const SnapshotDataset& fds = all_genes ? ds : subset;
    FoldResult fr;
    fr.held_out = fold.held_out;
    report.K = fold.de_k;
    const std::size_t u = ds.condition_index(fold.held_out);
    std::vector<int> u_times;
    for (int t : ds.times())
      if (!ds.cells_of(u, t).empty()) u_times.push_back(t);
    std::vector<int> targets;
    for (std::size_t k = 1; k < u_times.size(); ++k)
      if (!ds.cells_of(ctrl, u_times[k]).empty()) targets.push_back(u_times[k]);
    if (targets.empty()) {
      throw ValidationError("evaluate: condition '" + fold.held_out + "' has no snapshot after its first");
    }
    const auto preds = predictor.predict(fold, fds, targets, fr);
    const auto de = all_genes ? fold.de_mask : remap_genes(fold.de_mask, fold.hvg);

    std::vector<Matrix> fold_pred, fold_obs;
    std::map<std::string, std::vector<double>> lists;
    for (int t : targets) {
      const Matrix& pred_cells = preds.at(t);
      const Matrix obs_cells = fds.group(u, t);
      const Matrix ctrl_pb = pseudobulk(fds, ctrl, t);
      const Matrix obs_pb = column_means(obs_cells);
      const Matrix pred_pb = column_means(pred_cells);
      fold_pred.push_back(pred_pb);
      fold_obs.push_back(obs_pb);
      auto& pt = fr.per_time[t];
      const Matrix one_pred[] = {pred_pb};
      const Matrix one_obs[] = {obs_pb};
      pt["rmse"] = pseudobulk_rmse(one_pred, one_obs);
      pt["mae"] = mae_condition(pred_pb, obs_pb, ctrl_pb);
      pt["delta_pearson"] = delta_pearson(pred_cells, obs_cells, ctrl_pb).mean;
      pt["delta_pearson_de"] = de.size() >= 2 ? delta_pearson(pred_cells, obs_cells, ctrl_pb, de).mean : kNaN;
      const DeScores self = de_auc_auprc(obs_pb, ctrl_pb, pred_pb, std::min(fold.de_k, fds.num_genes() - 1));
      pt["auc"] = self.auc;
      pt["auprc"] = self.auprc;
      if (!de.empty() && de.size() < fds.num_genes()) {
        const DeScores f = de_auc_auprc_labels(de, ctrl_pb, pred_pb);
        pt["auc_fold_de"] = f.auc;
        pt["auprc_fold_de"] = f.auprc;
      } else {
        pt["auc_fold_de"] = kNaN;
        pt["auprc_fold_de"] = kNaN;
      }
      for (const auto& [name, value] : pt) {
        if (name == "rmse") continue;
        lists[name].push_back(value);
        pooled_lists[name].push_back(value);
      }
    }
    try {
      fr.metrics["pseudobulk_r2"] = pseudobulk_r2(fold_pred, fold_obs);
    } catch (const ValidationError&) {
      fr.metrics["pseudobulk_r2"] = kNaN;
    }
    fr.metrics["rmse"] = pseudobulk_rmse(fold_pred, fold_obs);
    for (const auto& [name, values] : lists) fr.metrics[name] = mean_of(values);
    all_pred.insert(all_pred.end(), fold_pred.begin(), fold_pred.end());
    all_obs.insert(all_obs.end(), fold_obs.begin(), fold_obs.end());

    if (latents) {
      if (auto z_hat = predictor.encode(fold, fds)) {
        fr.recovery = evaluate_recovery(*z_hat, *latents, d_iota, probe);
        fr.metrics["mcc_nu"] = fr.recovery->mcc.mcc;
        fr.metrics["linear_r2_iota_mean"] = fr.recovery->linear.r2_mean;
        fr.metrics["linear_r2_iota_min"] =
            *std::min_element(fr.recovery->linear.r2.begin(), fr.recovery->linear.r2.end());
        fr.metrics["probe_r2_mean"] = fr.recovery->probe.r2_mean;
        fr.metrics["probe_spearman_mean"] = fr.recovery->probe.spearman_mean;
      } else {
        report.has_recovery = false;
      }
    }
    report.folds.push_back(std::move(fr));
  }

  if (!all_obs.empty()) {
    try {
      report.pooled["pseudobulk_r2"] = pseudobulk_r2(all_pred, all_obs);
    } catch (const ValidationError&) {
      report.pooled["pseudobulk_r2"] = kNaN;
    }
    report.pooled["rmse"] = pseudobulk_rmse(all_pred, all_obs);
  }
  for (const auto& [name, values] : pooled_lists) report.pooled[name] = mean_of(values);
  if (report.has_recovery) {
    for (const auto& name : recovery_metric_names()) {
      std::vector<double> v;
      for (const auto& f : report.folds) v.push_back(f.metrics.at(name));
      report.pooled[name] = mean_of(v);
    }
  }
  return report;
}

std::string EvaluationReport::to_json() const {
  nlohmann::json j;
  j["K"] = K;
  j["pooled"] = pooled;
  j["recovery_available"] = has_recovery;
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& f : folds) {
    nlohmann::json fj;
    fj["held_out"] = f.held_out;
    fj["embedding_used"] = f.embedding_used;
    fj["embedding_fallback"] = f.fallback;
    fj["metrics"] = f.metrics;
    nlohmann::json pt;
    for (const auto& [t, m] : f.per_time) pt[std::to_string(t)] = m;
    fj["per_time"] = pt;
    if (f.recovery) {
      fj["recovery"] = {{"mcc_nu", f.recovery->mcc.mcc},
                        {"assignment", f.recovery->mcc.assignment},
                        {"degenerate_columns", f.recovery->mcc.degenerate_columns},
                        {"linear_r2_iota", f.recovery->linear.r2},
                        {"linear_degenerate", f.recovery->linear.degenerate},
                        {"probe_r2", f.recovery->probe.r2},
                        {"probe_spearman", f.recovery->probe.spearman},
                        {"probe_seed", f.recovery->probe.seed}};
    }
    arr.push_back(std::move(fj));
  }
  j["folds"] = std::move(arr);
  return j.dump(2);
}

std::string EvaluationReport::to_csv() const {
  std::string out = "fold,metric,value\n";
  for (const auto& f : folds) {
    std::vector<std::string> names = perturb_metric_names();
    if (has_recovery) names.insert(names.end(), recovery_metric_names().begin(), recovery_metric_names().end());
    for (const auto& name : names) {
      out += f.held_out + "," + name + "," + format_double(f.metrics.at(name)) + "\n";
    }
  }
  return out;
}

std::string DiagnoseReport::to_json() const {
  nlohmann::json j;
  j["baseline"] = baseline;
  j["mean_norm_iota"] = mean_norm_iota;
  j["mean_norm_nu"] = mean_norm_nu;
  j["ratio_iota_over_nu"] = ratio;
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : environments) {
    arr.push_back({{"condition", e.condition},
                   {"mean_norm_iota", e.mean_norm_iota},
                   {"mean_norm_nu", e.mean_norm_nu},
                   {"samples", e.samples}});
  }
  j["environments"] = std::move(arr);
  return j.dump(2);
}

namespace {

void finish(DiagnoseReport& r) {
  double si = 0.0, sn = 0.0;
  std::size_t n = 0;
  for (const auto& e : r.environments) {
    si += e.mean_norm_iota * static_cast<double>(e.samples);
    sn += e.mean_norm_nu * static_cast<double>(e.samples);
    n += e.samples;
  }
  if (n > 0) {
    r.mean_norm_iota = si / static_cast<double>(n);
    r.mean_norm_nu = sn / static_cast<double>(n);
  }
  r.ratio = r.mean_norm_nu > 0.0 ? r.mean_norm_iota / r.mean_norm_nu : 0.0;
}

}  // namespace

DiagnoseReport diagnose_model(const ModelParams& params, const SnapshotDataset& ds, std::size_t max_samples,
                              std::uint64_t seed) {
  const std::size_t ctrl = ds.control_index();
  DiagnoseReport report;
  report.baseline = ds.conditions[ctrl].id;
  if (!params.has_condition(report.baseline)) {
    throw ValidationError("diagnose: model has no embedding for the control '" + report.baseline + "'");
  }
  std::vector<std::string> envs;
  for (const auto& id : params.config().conditions)
    if (id != report.baseline) envs.push_back(id);
  if (envs.empty()) throw ValidationError("diagnose: single-environment model, nothing to compare");
  const auto times = ds.times();
  Rng rng(seed);
  for (const auto& id : envs) {
    EnvironmentDiagnostic e;
    e.condition = id;
    const std::size_t c = ds.condition_index(id);
    double si = 0.0, sn = 0.0;
    for (std::size_t k = 1; k < times.size(); ++k) {
      const auto prev_rows = ds.cells_of(c, times[k - 1]);
      auto curr_rows = ds.cells_of(c, times[k]);
      if (prev_rows.empty() || curr_rows.empty()) continue;
      const std::size_t per_t = std::max<std::size_t>(1, max_samples / (times.size() - 1));
      if (curr_rows.size() > per_t) curr_rows.resize(per_t);
      std::vector<std::size_t> prev_pick(curr_rows.size());
      for (auto& p : prev_pick) p = prev_rows[rng.index(prev_rows.size())];
      const Matrix x_prev = ds.expression.select_rows(prev_pick);
      const Matrix x_curr = ds.expression.select_rows(curr_rows);
      const Matrix zp_i = encode_invariant(params, x_prev).mean;
      const Matrix zp_n = encode_responsive(params, x_prev, id, times[k - 1]).mean;
      const Matrix zc_i = encode_invariant(params, x_curr).mean;
      const Matrix zc_n = encode_responsive(params, x_curr, id, times[k]).mean;
      const TransitionBatch env = transition_prior(params, zp_i, zp_n, id);
      const TransitionBatch base = transition_prior(params, zp_i, zp_n, report.baseline);
      for (std::size_t r = 0; r < curr_rows.size(); ++r) {
        si += vector_norm(score_difference(zc_i.row_span(r), env.iota.row(r), base.iota.row(r)));
        sn += vector_norm(score_difference(zc_n.row_span(r), env.nu.row(r), base.nu.row(r)));
        ++e.samples;
      }
    }
    if (e.samples > 0) {
      e.mean_norm_iota = si / static_cast<double>(e.samples);
      e.mean_norm_nu = sn / static_cast<double>(e.samples);
    }
    report.environments.push_back(e);
  }
  finish(report);
  return report;
}

DiagnoseReport diagnose_generator(const Generator& gen, const TrajectoryBundle& bundle) {
  DiagnoseReport report;
  report.baseline = gen.bank.envs.front().id;
  if (bundle.snapshots.size() < 2) throw ValidationError("diagnose: single-environment bundle");
  const std::size_t di = gen.spec.d_iota, dn = gen.spec.d_nu;
  for (std::size_t e = 1; e < bundle.snapshots.size(); ++e) {
    EnvironmentDiagnostic d;
    d.condition = bundle.env_ids[e];
    double si = 0.0, sn = 0.0;
    for (int t = 1; t <= bundle.T; ++t) {
      const Matrix& zp = bundle.snapshots[e][static_cast<std::size_t>(t - 1)].latent;
      const Matrix& zc = bundle.snapshots[e][static_cast<std::size_t>(t)].latent;
      const auto env = gen.transition(zp, e);
      const auto base = gen.transition(zp, 0);
      for (std::size_t r = 0; r < zc.rows(); ++r) {
        const auto row = zc.row_span(r);
        si += vector_norm(score_difference(row.subspan(0, di), env.first.row(r), base.first.row(r)));
        sn += vector_norm(score_difference(row.subspan(di, dn), env.second.row(r), base.second.row(r)));
        ++d.samples;
      }
    }
    if (d.samples > 0) {
      d.mean_norm_iota = si / static_cast<double>(d.samples);
      d.mean_norm_nu = sn / static_cast<double>(d.samples);
    }
    report.environments.push_back(d);
  }
  finish(report);
  return report;
}

}  // namespace cdyn

namespace cdyn {

GradcheckSummary run_gradcheck(const GradcheckOptions& options) {
  if (options.trials == 0) throw ValidationError("gradcheck: trials must be >= 1");
  if (options.batch == 0) throw ValidationError("gradcheck: batch must be >= 1");
  GradcheckSummary summary;
  for (std::size_t trial = 0; trial < options.trials; ++trial) {
    Rng rng(derive_seed(options.seed, trial));
    ModelConfig mc;
    mc.d_iota = options.d_iota;
    mc.d_nu = options.d_nu;
    mc.p = options.p;
    mc.hidden = options.hidden;
    mc.T = 5;
    mc.conditions = {"ctrl", "pert_a", "pert_b"};
    const ModelParams params = ModelParams::initialize(mc, rng.engine()());
    const std::string cond = mc.conditions[1 + rng.index(2)];
    const int t = 1 + static_cast<int>(rng.index(static_cast<std::size_t>(mc.T)));
    const PairBatch pairs{rng.normal_matrix(options.batch, mc.p), rng.normal_matrix(options.batch, mc.p), cond, t};
    const AlignBatch align{rng.normal_matrix(options.batch, mc.p), rng.normal_matrix(options.batch, mc.p), cond, t};
    const LossWeights weights{rng.uniform(0.5, 2.0), rng.uniform(0.0, 0.1),
                              rng.bernoulli(0.5) ? rng.uniform(0.0, 1.0) : 0.0};
    const std::uint64_t noise_seed = rng.engine()();
    const DifferentiableFn fn = [&](std::span<const double> values) {
      LossEvaluation ev = total_loss_and_gradient(params, values, pairs, &align, weights, noise_seed);
      return LossAndGradient{ev.report.total, std::move(ev.gradient)};
    };
    const GradCheckResult r = finite_diff_check(fn, params.values(), options.step);
    GradcheckTrial out{r.max_relative_error, r.worst_coordinate, "", r.analytic_at_worst, r.numeric_at_worst};
    for (const auto& b : params.blocks()) {
      if (r.worst_coordinate >= b.offset && r.worst_coordinate < b.offset + b.size()) out.worst_block = b.name;
    }
    summary.worst = std::max(summary.worst, out.max_relative_error);
    summary.pass = summary.pass && out.max_relative_error <= options.tolerance;
    summary.trials.push_back(std::move(out));
  }
  return summary;
}

}  // namespace cdyn
