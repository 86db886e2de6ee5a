#include "cdyn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cdyn/folds.hpp"

namespace cdyn {

Correlation pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ValidationError("pearson: length mismatch");
  if (x.size() < 2) throw ValidationError("pearson: need at least 2 values");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) return {0.0, true};
  return {std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0), false};
}

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

Correlation spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ValidationError("spearman: length mismatch");
  if (x.size() < 2) throw ValidationError("spearman: need at least 2 values");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  return pearson(rx, ry);
}

namespace {

void check_labels(std::span<const int> labels, std::span<const double> scores, std::size_t& pos,
                  std::size_t& neg) {
  if (labels.size() != scores.size()) throw ValidationError("auc: labels and scores differ in length");
  pos = neg = 0;
  for (int l : labels) {
    if (l == 1) ++pos;
    else if (l == 0) ++neg;
    else throw ValidationError("auc: labels must be 0 or 1");
  }
  if (pos == 0 || neg == 0) throw ValidationError("auc: need both positive and negative labels");
}

}  // namespace

double auc_roc(std::span<const int> labels, std::span<const double> scores) {
  std::size_t pos = 0, neg = 0;
  check_labels(labels, scores, pos, neg);
  const auto ranks = average_ranks(scores);
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == 1) rank_sum += ranks[i];
  const double np = static_cast<double>(pos);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(neg));
}

double auprc(std::span<const int> labels, std::span<const double> scores) {
  std::size_t pos = 0, neg = 0;
  check_labels(labels, scores, pos, neg);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double ap = 0.0, prev_recall = 0.0;
  std::size_t tp = 0, seen = 0, i = 0;
  while (i < order.size()) {
    // Tied scores form one threshold.
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      tp += labels[order[j]] == 1 ? 1 : 0;
      ++seen;
      ++j;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(seen);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

namespace {

void check_pseudobulks(std::span<const Matrix> pred, std::span<const Matrix> obs) {
  if (pred.size() != obs.size() || pred.empty()) {
    throw ValidationError("pseudobulk metric: need equally many non-empty pred and obs pseudobulks");
  }
  for (std::size_t k = 0; k < pred.size(); ++k) {
    if (!pred[k].same_shape(obs[k]) || pred[k].rows() != 1) {
      throw ValidationError("pseudobulk metric: condition " + std::to_string(k) + " has shapes " +
                            pred[k].shape_string() + " vs " + obs[k].shape_string());
    }
  }
}

}  // namespace

double pseudobulk_r2(std::span<const Matrix> pred, std::span<const Matrix> obs) {
  check_pseudobulks(pred, obs);
  const std::size_t g = obs[0].cols();
  std::vector<double> mean(g, 0.0);
  for (const auto& o : obs)
    for (std::size_t j = 0; j < g; ++j) mean[j] += o(0, j) / static_cast<double>(obs.size());
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < obs.size(); ++k) {
    for (std::size_t j = 0; j < g; ++j) {
      const double e = pred[k](0, j) - obs[k](0, j);
      const double d = obs[k](0, j) - mean[j];
      num += e * e;
      den += d * d;
    }
  }
  if (!(den > 0.0)) throw ValidationError("pseudobulk_r2: observed pseudobulks have zero variance");
  return 1.0 - num / den;
}

double pseudobulk_rmse(std::span<const Matrix> pred, std::span<const Matrix> obs) {
  check_pseudobulks(pred, obs);
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < obs.size(); ++k) {
    for (std::size_t j = 0; j < obs[k].cols(); ++j) {
      const double e = pred[k](0, j) - obs[k](0, j);
      s += e * e;
      ++n;
    }
  }
  return std::sqrt(s / static_cast<double>(n));
}

DeltaPearson delta_pearson(const Matrix& pred, const Matrix& obs, const Matrix& ctrl,
                           std::span<const std::size_t> genes) {
  if (pred.cols() != obs.cols() || ctrl.cols() != obs.cols() || ctrl.rows() != 1) {
    throw ValidationError("delta_pearson: gene dimensions differ");
  }
  std::vector<std::size_t> cols(genes.begin(), genes.end());
  if (cols.empty()) {
    cols.resize(obs.cols());
    std::iota(cols.begin(), cols.end(), 0);
  }
  for (std::size_t c : cols)
    if (c >= obs.cols()) throw ValidationError("delta_pearson: gene index out of range");
  const std::size_t n = std::min(pred.rows(), obs.rows());
  if (n == 0) throw ValidationError("delta_pearson: no cells");
  DeltaPearson out;
  std::vector<double> a(cols.size()), b(cols.size());
  double sum = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t k = 0; k < cols.size(); ++k) {
      a[k] = pred(r, cols[k]) - ctrl(0, cols[k]);
      b[k] = obs(r, cols[k]) - ctrl(0, cols[k]);
    }
    const Correlation c = cols.size() < 2 ? Correlation{0.0, true} : pearson(a, b);
    if (c.degenerate) {
      ++out.skipped;
      continue;
    }
    sum += c.value;
    ++out.cells;
  }
  out.mean = out.cells ? sum / static_cast<double>(out.cells) : 0.0;
  return out;
}

double mae_condition(const Matrix& pred, const Matrix& obs, const Matrix& ctrl) {
  if (!pred.same_shape(obs) || !ctrl.same_shape(obs) || obs.rows() != 1 || obs.cols() == 0) {
    throw ValidationError("mae_condition: expected three 1 x G pseudobulks");
  }
  double s = 0.0;
  for (std::size_t j = 0; j < obs.cols(); ++j) {
    s += std::abs((pred(0, j) - ctrl(0, j)) - (obs(0, j) - ctrl(0, j)));
  }
  return s / static_cast<double>(obs.cols());
}

DeScores de_auc_auprc_labels(std::span<const std::size_t> positive, const Matrix& ctrl, const Matrix& pred) {
  if (!pred.same_shape(ctrl) || ctrl.rows() != 1) throw ValidationError("de_auc_auprc: shape mismatch");
  std::vector<int> labels(ctrl.cols(), 0);
  for (std::size_t g : positive) labels.at(g) = 1;
  std::vector<double> scores(ctrl.cols());
  for (std::size_t j = 0; j < ctrl.cols(); ++j) scores[j] = std::abs(pred(0, j) - ctrl(0, j));
  return {auc_roc(labels, scores), auprc(labels, scores)};
}

DeScores de_auc_auprc(const Matrix& obs, const Matrix& ctrl, const Matrix& pred, std::size_t K) {
  if (K == 0) throw ValidationError("de_auc_auprc: K must be >= 1");
  if (!obs.same_shape(ctrl) || obs.rows() != 1) throw ValidationError("de_auc_auprc: shape mismatch");
  if (K >= obs.cols()) {
    throw ValidationError("de_auc_auprc: K = " + std::to_string(K) + " must be below the gene count " +
                          std::to_string(obs.cols()));
  }
  std::vector<double> delta(obs.cols());
  for (std::size_t j = 0; j < obs.cols(); ++j) delta[j] = obs(0, j) - ctrl(0, j);
  return de_auc_auprc_labels(top_k_abs(delta, K), ctrl, pred);
}

}  // namespace cdyn
