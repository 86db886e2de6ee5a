#include "cdyn/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cdyn {

SnapshotDataset normalize_counts(const SnapshotDataset& ds, NormalizeReport* report) {
  if (ds.mode != ExpressionMode::kCounts) {
    throw ValidationError("normalize_counts: dataset is already normalized");
  }
  ds.validate();
  std::vector<std::size_t> keep;
  std::vector<std::string> dropped;
  for (std::size_t r = 0; r < ds.num_cells(); ++r) {
    const auto row = ds.expression.row_span(r);
    if (std::accumulate(row.begin(), row.end(), 0.0) > 0.0) {
      keep.push_back(r);
    } else {
      dropped.push_back(ds.cell_ids[r]);
    }
  }
  if (keep.empty()) throw ValidationError("normalize_counts: every cell has zero library size");
  SnapshotDataset out = ds.subset_cells(keep);
  for (std::size_t r = 0; r < out.num_cells(); ++r) {
    auto row = out.expression.row_span(r);
    const double scale = 10000.0 / std::accumulate(row.begin(), row.end(), 0.0);
    for (double& v : row) v = std::log1p(v * scale);
  }
  out.mode = ExpressionMode::kNormalized;
  if (report) report->dropped_cells = std::move(dropped);
  return out;
}

std::vector<double> masked_variance(const Matrix& x, const std::vector<bool>& mask) {
  if (mask.size() != x.rows()) throw ValidationError("masked_variance: mask length mismatch");
  std::vector<double> mean(x.cols(), 0.0), var(x.cols(), 0.0);
  std::size_t n = 0;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    if (!mask[r]) continue;
    ++n;
    for (std::size_t c = 0; c < x.cols(); ++c) mean[c] += x(r, c);
  }
  if (n == 0) throw ValidationError("masked_variance: empty mask");
  for (double& m : mean) m /= static_cast<double>(n);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    if (!mask[r]) continue;
    for (std::size_t c = 0; c < x.cols(); ++c) {
      const double d = x(r, c) - mean[c];
      var[c] += d * d;
    }
  }
  for (double& v : var) v /= static_cast<double>(n);
  return var;
}

std::vector<std::size_t> select_hvg(const SnapshotDataset& ds, const std::vector<bool>& training_mask,
                                    std::size_t k) {
  if (k > ds.num_genes()) {
    throw ValidationError("select_hvg: k = " + std::to_string(k) + " exceeds " +
                          std::to_string(ds.num_genes()) + " genes");
  }
  if (std::none_of(training_mask.begin(), training_mask.end(), [](bool b) { return b; })) {
    throw ValidationError("select_hvg: empty training mask");
  }
  const auto var = masked_variance(ds.expression, training_mask);
  std::vector<std::size_t> order(var.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return var[a] > var[b]; });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

}  // namespace cdyn
