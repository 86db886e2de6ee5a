#include "cdyn/folds.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include <json.hpp>

#include "cdyn/preprocess.hpp"

namespace cdyn {

std::string FoldSpec::to_json() const {
  nlohmann::json j = {{"held_out", held_out}, {"training", training}, {"hvg", hvg},
                      {"de_mask", de_mask},   {"de_k", de_k}};
  return j.dump();
}

Matrix pseudobulk(const SnapshotDataset& ds, std::size_t cond, int t) {
  const auto rows = ds.cells_of(cond, t);
  if (rows.empty()) {
    throw ValidationError("pseudobulk: no cells for condition '" + ds.conditions.at(cond).id +
                          "' at t = " + std::to_string(t));
  }
  return column_means(ds.expression.select_rows(rows));
}

std::vector<std::size_t> top_k_abs(std::span<const double> v, std::size_t k) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return std::abs(v[a]) > std::abs(v[b]); });
  order.resize(std::min(k, order.size()));
  std::sort(order.begin(), order.end());
  return order;
}

std::vector<std::size_t> de_gene_mask(const SnapshotDataset& ds, const std::vector<std::string>& training,
                                      std::size_t K) {
  if (K == 0) throw ValidationError("de_gene_mask: K must be >= 1");
  const std::size_t ctrl = ds.control_index();
  std::set<std::size_t> mask;
  for (const auto& id : training) {
    const std::size_t c = ds.condition_index(id);
    if (c == ctrl) continue;
    for (int t : ds.times()) {
      if (ds.cells_of(c, t).empty() || ds.cells_of(ctrl, t).empty()) continue;
      Matrix shift = pseudobulk(ds, c, t);
      const Matrix base = pseudobulk(ds, ctrl, t);
      for (std::size_t g = 0; g < shift.cols(); ++g) shift(0, g) -= base(0, g);
      for (std::size_t g : top_k_abs(shift.data(), K)) mask.insert(g);
    }
  }
  return {mask.begin(), mask.end()};
}

std::vector<bool> training_cell_mask(const SnapshotDataset& ds, const std::vector<std::string>& training) {
  std::vector<bool> allowed(ds.conditions.size(), false);
  for (const auto& id : training) allowed[ds.condition_index(id)] = true;
  std::vector<bool> mask(ds.num_cells());
  for (std::size_t r = 0; r < ds.num_cells(); ++r) mask[r] = allowed[ds.condition[r]];
  return mask;
}

std::vector<FoldSpec> build_loo_folds(const SnapshotDataset& ds, const FoldOptions& options) {
  ds.validate();
  const std::size_t ctrl = ds.control_index();
  std::vector<std::string> perturbations;
  for (std::size_t c = 0; c < ds.conditions.size(); ++c) {
    if (c != ctrl) perturbations.push_back(ds.conditions[c].id);
  }
  if (perturbations.size() < 2) {
    throw ValidationError("build_loo_folds: need at least 2 perturbations, found " +
                          std::to_string(perturbations.size()));
  }
  if (ds.num_genes() < 2) throw ValidationError("build_loo_folds: need at least 2 genes");
  std::vector<FoldSpec> folds;
  for (const auto& held : perturbations) {
    FoldSpec f;
    f.held_out = held;
    f.training.push_back(ds.conditions[ctrl].id);
    for (const auto& p : perturbations)
      if (p != held) f.training.push_back(p);
    const auto mask = training_cell_mask(ds, f.training);
    const std::size_t k_hvg = options.hvg == 0 ? ds.num_genes() : std::min(options.hvg, ds.num_genes());
    f.hvg = select_hvg(ds, mask, k_hvg);
    f.de_k = std::min(options.K, ds.num_genes() - 1);
    f.de_mask = de_gene_mask(ds, f.training, f.de_k);
    folds.push_back(std::move(f));
  }
  return folds;
}

}  // namespace cdyn
