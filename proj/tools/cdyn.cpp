// Command-line front end: generate, train, predict, evaluate, gradcheck, diagnose.
//
// Exit codes: 0 success, 1 validation error, 2 runtime error. Failures print
// one JSON line to stderr.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cdyn/config.hpp"
#include "cdyn/dataset.hpp"
#include "cdyn/folds.hpp"
#include "cdyn/pipeline.hpp"
#include "cdyn/predict.hpp"
#include "cdyn/preprocess.hpp"
#include "cdyn/rng.hpp"
#include "cdyn/synthgen.hpp"
#include "cdyn/trainer.hpp"

namespace fs = std::filesystem;
using namespace cdyn;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!text.empty() && text.back() != '\n') out << '\n';
}

// Precedence: flag > CDYN_SEED > config file.
template <typename T>
void resolve_seed(T& seed, const CLI::Option* flag, std::uint64_t flag_value) {
  if (flag->count() > 0) {
    seed = flag_value;
    return;
  }
  std::uint64_t env = 0;
  if (seed_from_env(env)) seed = env;
}

fs::path data_dir_of(const fs::path& data) { return fs::is_directory(data) ? data : data.parent_path(); }

RunConfig load_run_config(const std::string& path) {
  return path.empty() ? RunConfig{} : RunConfig::load(path);
}

std::string fold_dir_name(const std::string& id) { return "fold_" + id; }

// ---------------------------------------------------------------- generate

struct GenerateArgs {
  std::string config, out;
  bool unpaired = false;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  std::size_t cells = 0;
  int T = -1;
};

int cmd_generate(const GenerateArgs& a) {
  GeneratorConfig cfg = a.config.empty() ? GeneratorConfig{} : generator_config_from_json(read_file(a.config));
  resolve_seed(cfg.seed, a.seed_opt, a.seed);
  if (a.cells > 0) cfg.cells = a.cells;
  if (a.T >= 0) cfg.T = a.T;
  cfg.validate();
  const Generator gen = make_generator(cfg);
  const std::uint64_t sample_seed = derive_seed(cfg.seed, 0x5a);
  const TrajectoryBundle bundle = sample_trajectories(gen, cfg.cells, cfg.T, sample_seed, a.unpaired);
  export_dataset(gen, bundle, a.out, sample_seed);
  const RankCheck rc = check_rank_condition(gen.bank);
  std::cout << "rank check: rank " << rc.rank << " of " << 2 * gen.spec.d_nu << " -> "
            << (rc.pass ? "pass" : "fail") << "\n"
            << "wrote " << gen.bank.envs.size() << " environments x " << cfg.T + 1 << " snapshots x "
            << cfg.cells << " cells to " << a.out << "\n";
  return 0;
}

// ------------------------------------------------------------------- train

struct TrainArgs {
  std::string data, config, out, ablate = "none";
  bool loo = false;
  std::size_t epochs = 0;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  bool quiet = false;
};

void train_one(const SnapshotDataset& ds, const std::vector<std::string>& training, const RunConfig& cfg,
               const fs::path& out, bool quiet) {
  fs::create_directories(out);
  std::ofstream log(out / "loss_log.jsonl");
  if (!log) throw std::runtime_error("cannot write " + (out / "loss_log.jsonl").string());
  const auto start = std::chrono::steady_clock::now();
  std::size_t last_epoch = SIZE_MAX;
  const StepCallback progress = [&](std::size_t step, std::size_t epoch, const LossReport& r) {
    if (quiet || epoch == last_epoch) return;
    last_epoch = epoch;
    std::cout << "  epoch " << epoch + 1 << "/" << cfg.epochs << " step " << step << " loss " << r.total << "\n";
  };
  const TrainResult result = train_model(ds, training, cfg, &log, progress);
  result.params.save(out / "model.json");
  cfg.save(out / "config.json");
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  nlohmann::json rep = {{"steps", result.steps},
                        {"final_total", result.last.total},
                        {"final_neg_elbo", result.last.neg_elbo},
                        {"skipped_transitions", result.skipped},
                        {"training_conditions", training}};
  write_file(out / "train_report.json", rep.dump(2));
  if (!quiet) std::cout << "  trained " << result.steps << " steps in " << secs << " s -> " << out << "\n";
}

int cmd_train(const TrainArgs& a) {
  RunConfig cfg = load_run_config(a.config);
  resolve_seed(cfg.seed, a.seed_opt, a.seed);
  if (a.epochs > 0) cfg.epochs = a.epochs;
  cfg = apply_ablation(cfg, parse_ablation(a.ablate));
  cfg.validate();
  const SnapshotDataset ds = load_dataset(a.data);
  const fs::path out = a.out;
  fs::create_directories(out);

  if (!a.loo) {
    std::vector<std::string> training;
    for (const auto& c : ds.conditions) training.push_back(c.id);
    SnapshotDataset train_ds = ds;
    if (cfg.hvg > 0) {
      std::vector<bool> all(ds.num_cells(), true);
      train_ds = ds.subset_genes(select_hvg(ds, all, std::min(cfg.hvg, ds.num_genes())));
    }
    train_one(train_ds, training, cfg, out, a.quiet);
    return 0;
  }
  const auto folds = build_loo_folds(ds, FoldOptions{cfg.hvg, cfg.K});
  nlohmann::json report = nlohmann::json::array();
  for (const auto& fold : folds) {
    if (!a.quiet) std::cout << "fold " << fold.held_out << "\n";
    SnapshotDataset fold_ds = ds.subset_cells([&] {
      std::vector<std::size_t> rows;
      const auto mask = training_cell_mask(ds, fold.training);
      for (std::size_t r = 0; r < mask.size(); ++r)
        if (mask[r]) rows.push_back(r);
      return rows;
    }());
    if (fold.hvg.size() != ds.num_genes()) fold_ds = fold_ds.subset_genes(fold.hvg);
    train_one(fold_ds, fold.training, cfg, out / fold_dir_name(fold.held_out), a.quiet);
    report.push_back(nlohmann::json::parse(fold.to_json()));
  }
  cfg.save(out / "config.json");
  write_file(out / "fold_report.json", report.dump(2));
  return 0;
}

// ----------------------------------------------------------------- predict

struct PredictArgs {
  std::string model, data, condition, out;
  int horizon = 1;
  int start = -1;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
};

int cmd_predict(const PredictArgs& a) {
  if (a.horizon <= 0) throw ValidationError("predict: horizon must be >= 1");
  std::uint64_t seed = a.seed;
  resolve_seed(seed, a.seed_opt, a.seed);
  const ModelParams params = ModelParams::load(a.model);
  const SnapshotDataset ds = load_dataset(a.data);
  if (params.config().p != ds.num_genes()) {
    throw ValidationError("predict: model expects " + std::to_string(params.config().p) + " genes, data has " +
                          std::to_string(ds.num_genes()));
  }
  const std::size_t u = ds.condition_index(a.condition);
  int start = a.start;
  if (start < 0) {
    for (int t : ds.times())
      if (!ds.cells_of(u, t).empty()) start = t;
  }
  const Matrix x0 = ds.group(u, start);
  if (x0.rows() == 0) {
    throw ValidationError("predict: condition '" + a.condition + "' has no cells at t = " + std::to_string(start));
  }
  const ConditionResolution res = resolve_condition(params, ds, a.condition);
  const Rollout r = rollout(params, x0, res.used, start, a.horizon, seed);

  SnapshotDataset pred;
  pred.genes = ds.genes;
  pred.conditions = ds.conditions;
  pred.mode = ExpressionMode::kNormalized;
  pred.expression = vstack(r.x);
  for (std::size_t k = 0; k < r.x.size(); ++k) {
    for (std::size_t i = 0; i < r.x[k].rows(); ++i) {
      pred.cell_ids.push_back("pred_" + a.condition + "_t" + std::to_string(r.times[k]) + "_" + std::to_string(i));
      pred.condition.push_back(u);
      pred.time.push_back(r.times[k]);
    }
  }
  const fs::path out = a.out;
  save_snapshot_table(pred, out / "snapshot.csv");
  nlohmann::json rep = {{"requested", res.requested},
                        {"embedding_used", res.used},
                        {"embedding_fallback", res.fallback},
                        {"target_distance", res.distance},
                        {"start_time", start},
                        {"horizon", a.horizon},
                        {"seed", seed}};
  nlohmann::json pbs;
  for (std::size_t k = 0; k < r.x.size(); ++k) pbs[std::to_string(r.times[k])] = column_means(r.x[k]).values();
  rep["pseudobulk"] = pbs;
  write_file(out / "prediction_report.json", rep.dump(2));
  std::cout << "predicted " << a.condition << " for t = " << start + 1 << ".." << start + a.horizon << " from "
            << x0.rows() << " cells" << (res.fallback ? " (embedding fallback: " + res.used + ")" : "") << "\n";
  return 0;
}

// ---------------------------------------------------------------- evaluate

struct EvaluateArgs {
  std::string data, model, pred, config, out, folds = "loo";
  std::size_t K = 0;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
};

int cmd_evaluate(const EvaluateArgs& a) {
  if (a.model.empty() == a.pred.empty()) throw ValidationError("evaluate: give exactly one of --model or --pred");
  if (a.folds != "loo") throw ValidationError("evaluate: only --folds loo is supported");
  RunConfig cfg;
  if (!a.config.empty()) {
    cfg = RunConfig::load(a.config);
  } else if (!a.model.empty() && fs::exists(fs::path(a.model) / "config.json")) {
    cfg = RunConfig::load(fs::path(a.model) / "config.json");
  }
  resolve_seed(cfg.seed, a.seed_opt, a.seed);
  if (a.K > 0) cfg.K = a.K;
  const SnapshotDataset ds = load_dataset(a.data);
  const auto folds = build_loo_folds(ds, FoldOptions{cfg.hvg, cfg.K});

  std::unique_ptr<FoldPredictor> predictor;
  if (!a.model.empty()) {
    std::map<std::string, ModelParams> models;
    const fs::path m = a.model;
    for (const auto& fold : folds) {
      fs::path file = m / fold_dir_name(fold.held_out) / "model.json";
      if (!fs::exists(file)) {
        // A single model applied to every fold (it may have seen the held-out condition).
        file = fs::is_directory(m) ? m / "model.json" : m;
      }
      models.emplace(fold.held_out, ModelParams::load(file));
    }
    predictor = std::make_unique<ModelPredictor>(std::move(models), cfg.seed);
  } else {
    predictor = std::make_unique<TablePredictor>(load_dataset(a.pred));
  }

  std::size_t d_iota = 0;
  const auto latents = load_latent_truth(data_dir_of(a.data), ds, &d_iota);
  ProbeOptions probe;
  probe.seed = cfg.seed;
  const EvaluationReport report = evaluate_folds(ds, folds, *predictor, latents, d_iota, probe);

  const fs::path out = a.out;
  write_file(out / "metrics.json", report.to_json());
  write_file(out / "metrics.csv", report.to_csv());
  nlohmann::json fr = nlohmann::json::array();
  for (const auto& f : folds) fr.push_back(nlohmann::json::parse(f.to_json()));
  write_file(out / "fold_report.json", fr.dump(2));

  std::cout << "folds: " << report.folds.size() << ", K = " << report.K << "\n";
  for (const auto& [name, value] : report.pooled) std::cout << "  " << name << " = " << value << "\n";
  if (!latents) std::cout << "  recovery metrics: absent (no latents_truth)\n";
  return 0;
}

// --------------------------------------------------------------- gradcheck

struct GradcheckArgs {
  std::string config;
  std::size_t trials = 20;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  std::size_t hidden = 16;
};

int cmd_gradcheck(const GradcheckArgs& a) {
  GradcheckOptions o;
  if (!a.config.empty()) {
    const RunConfig cfg = RunConfig::load(a.config);
    o.d_iota = cfg.d_iota;
    o.d_nu = cfg.d_nu;
    o.seed = cfg.seed;
  }
  resolve_seed(o.seed, a.seed_opt, a.seed);
  o.trials = a.trials;
  o.hidden = a.hidden;
  const GradcheckSummary s = run_gradcheck(o);
  for (std::size_t i = 0; i < s.trials.size(); ++i) {
    const auto& t = s.trials[i];
    std::printf("trial %2zu  max rel err %.3e  worst %s[%zu] analytic %.6e numeric %.6e\n", i, t.max_relative_error,
                t.worst_block.c_str(), t.worst_coordinate, t.analytic, t.numeric);
  }
  std::printf("gradcheck %s: worst %.3e (tolerance %.0e)\n", s.pass ? "passed" : "FAILED", s.worst, o.tolerance);
  return s.pass ? 0 : 1;
}

// ---------------------------------------------------------------- diagnose

struct DiagnoseArgs {
  std::string model, data, out;
  std::size_t samples = 2000;
  std::uint64_t seed = 0;
};

int cmd_diagnose(const DiagnoseArgs& a) {
  const ModelParams params = ModelParams::load(a.model);
  const SnapshotDataset ds = load_dataset(a.data);
  std::size_t non_control = 0;
  for (const auto& c : ds.conditions) non_control += c.is_control ? 0 : 1;
  if (non_control == 0) throw ValidationError("diagnose: single-environment dataset");
  const DiagnoseReport r = diagnose_model(params, ds, a.samples, a.seed);
  if (!a.out.empty()) write_file(a.out, r.to_json());
  for (const auto& e : r.environments) {
    std::printf("  %-10s |d_iota| %.4g  |d_nu| %.4g  (%zu samples)\n", e.condition.c_str(), e.mean_norm_iota,
                e.mean_norm_nu, e.samples);
  }
  std::printf("mean |d_iota| / mean |d_nu| = %.6g\n", r.ratio);
  return 0;
}

void fail_line(const char* kind, const std::string& message) {
  nlohmann::json j = {{"error", kind}, {"message", message}};
  std::cerr << j.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Causal latent-dynamics VAE for perturbation prediction"};
  app.require_subcommand(1);

  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "Write a synthetic temporal interventional dataset");
  gen->add_option("--config", ga.config, "Generator config JSON");
  gen->add_option("--out", ga.out, "Output directory")->required();
  gen->add_flag("--unpaired", ga.unpaired, "Shuffle rows within every (condition, time)");
  ga.seed_opt = gen->add_option("--seed", ga.seed, "Generator seed");
  gen->add_option("--cells", ga.cells, "Cells per (condition, time)");
  gen->add_option("--T", ga.T, "Number of transition steps");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train the model");
  train->add_option("--data", ta.data, "Dataset directory or table")->required();
  train->add_option("--config", ta.config, "Run config JSON");
  train->add_option("--out", ta.out, "Output directory")->required();
  train->add_option("--ablate", ta.ablate, "none|alignment|sparsity|both");
  train->add_flag("--loo", ta.loo, "Train one model per leave-one-out fold");
  train->add_option("--epochs", ta.epochs, "Override the configured epochs");
  ta.seed_opt = train->add_option("--seed", ta.seed, "Run seed");
  train->add_flag("--quiet", ta.quiet, "No progress output");

  PredictArgs pa;
  auto* pred = app.add_subcommand("predict", "Roll a condition forward in time");
  pred->add_option("--model", pa.model, "model.json")->required();
  pred->add_option("--data", pa.data, "Dataset directory or table")->required();
  pred->add_option("--condition", pa.condition, "Condition id")->required();
  pred->add_option("--horizon", pa.horizon, "Steps to predict")->required();
  pred->add_option("--start", pa.start, "Start time (default: latest observed)");
  pred->add_option("--out", pa.out, "Output directory")->required();
  pa.seed_opt = pred->add_option("--seed", pa.seed, "Sampling seed");

  EvaluateArgs ea;
  auto* eval = app.add_subcommand("evaluate", "Leave-one-out metric battery");
  eval->add_option("--data", ea.data, "Dataset directory or table")->required();
  eval->add_option("--model", ea.model, "Model file or directory from train --loo");
  eval->add_option("--pred", ea.pred, "Predicted snapshot table");
  eval->add_option("--config", ea.config, "Run config JSON");
  eval->add_option("--folds", ea.folds, "Fold scheme (loo)");
  eval->add_option("--K", ea.K, "Top-K DE genes");
  eval->add_option("--out", ea.out, "Output directory")->required();
  ea.seed_opt = eval->add_option("--seed", ea.seed, "Evaluation seed");

  GradcheckArgs ca;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the objective gradient");
  gc->add_option("--config", ca.config, "Run config JSON");
  gc->add_option("--trials", ca.trials, "Random configurations");
  gc->add_option("--hidden", ca.hidden, "Hidden width of the checked networks");
  ca.seed_opt = gc->add_option("--seed", ca.seed, "Seed");

  DiagnoseArgs da;
  auto* diag = app.add_subcommand("diagnose", "Transition score-difference block norms");
  diag->add_option("--model", da.model, "model.json")->required();
  diag->add_option("--data", da.data, "Dataset directory or table")->required();
  diag->add_option("--out", da.out, "Report JSON path");
  diag->add_option("--samples", da.samples, "Cells per environment");
  diag->add_option("--seed", da.seed, "Seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fail_line("usage", e.what());
    return 1;
  }

  try {
    if (*gen) return cmd_generate(ga);
    if (*train) return cmd_train(ta);
    if (*pred) return cmd_predict(pa);
    if (*eval) return cmd_evaluate(ea);
    if (*gc) return cmd_gradcheck(ca);
    if (*diag) return cmd_diagnose(da);
  } catch (const ValidationError& e) {
    fail_line("validation", e.what());
    return 1;
  } catch (const NumericError& e) {
    fail_line("numeric", e.what());
    return 2;
  } catch (const std::exception& e) {
    fail_line("runtime", e.what());
    return 2;
  }
  return 0;
}
