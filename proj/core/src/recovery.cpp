#include "cdyn/recovery.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "cdyn/adam.hpp"
#include "cdyn/metrics.hpp"
#include "cdyn/rng.hpp"
#include "cdyn/tape.hpp"

namespace cdyn {

std::vector<std::size_t> max_weight_assignment(const Matrix& w) {
  const std::size_t n = w.rows();
  if (w.cols() != n) throw ValidationError("assignment: weight matrix must be square");
  std::vector<std::size_t> best(n);
  std::iota(best.begin(), best.end(), 0);
  if (n == 0) return best;
  if (n <= 8) {
    std::vector<std::size_t> perm = best;
    double best_score = -std::numeric_limits<double>::infinity();
    do {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += w(i, perm[i]);
      if (s > best_score) {
        best_score = s;
        best = perm;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
  }
  // Hungarian algorithm (potentials, O(n^3)) on cost = -w.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = -w(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  for (std::size_t j = 1; j <= n; ++j) best[p[j] - 1] = j - 1;
  return best;
}

MccResult mcc_nu(const Matrix& z_hat, const Matrix& z_true) {
  if (z_hat.rows() != z_true.rows()) throw ValidationError("mcc_nu: row counts differ");
  if (z_hat.cols() != z_true.cols() || z_true.cols() == 0) {
    throw ValidationError("mcc_nu: expected equal, non-zero column counts");
  }
  if (z_true.rows() < 2) throw ValidationError("mcc_nu: need at least 2 rows");
  const std::size_t d = z_true.cols();
  MccResult out;
  std::vector<std::vector<double>> hat_cols(d), true_cols(d);
  std::vector<bool> hat_flat(d, false), true_flat(d, false);
  for (std::size_t k = 0; k < d; ++k) {
    hat_cols[k] = z_hat.column_values(k);
    true_cols[k] = z_true.column_values(k);
  }
  Matrix corr(d, d);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const Correlation c = pearson(true_cols[i], hat_cols[j]);
      corr(i, j) = std::abs(c.value);
      if (c.degenerate) {
        const auto flat = [](const std::vector<double>& v) {
          return std::all_of(v.begin(), v.end(), [&](double x) { return x == v[0]; });
        };
        true_flat[i] = true_flat[i] || flat(true_cols[i]);
        hat_flat[j] = hat_flat[j] || flat(hat_cols[j]);
      }
    }
  }
  for (std::size_t k = 0; k < d; ++k) out.degenerate_columns += (hat_flat[k] ? 1 : 0) + (true_flat[k] ? 1 : 0);
  out.assignment = max_weight_assignment(corr);
  double s = 0.0;
  for (std::size_t i = 0; i < d; ++i) s += corr(i, out.assignment[i]);
  out.mcc = s / static_cast<double>(d);
  return out;
}

void train_test_split(std::size_t n, std::uint64_t seed, std::vector<std::size_t>& train,
                      std::vector<std::size_t>& test) {
  Rng rng(seed);
  const auto perm = rng.permutation(n);
  const std::size_t n_test = std::max<std::size_t>(1, n / 5);
  test.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_test));
  train.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_test), perm.end());
}

namespace {

double r2_score(std::span<const double> pred, std::span<const double> obs) {
  const double mean = std::accumulate(obs.begin(), obs.end(), 0.0) / static_cast<double>(obs.size());
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    num += (pred[i] - obs[i]) * (pred[i] - obs[i]);
    den += (obs[i] - mean) * (obs[i] - mean);
  }
  if (!(den > 0.0)) return 0.0;
  return 1.0 - num / den;
}

using EigenMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace

LinearFitResult linear_block_fit(const Matrix& z_hat, const Matrix& z_true, std::uint64_t seed) {
  if (z_hat.rows() != z_true.rows()) throw ValidationError("linear_block_fit: row counts differ");
  const std::size_t n = z_hat.rows(), k = z_hat.cols();
  if (n < k + 2) {
    throw ValidationError("linear_block_fit: need at least " + std::to_string(k + 2) + " rows, got " +
                          std::to_string(n));
  }
  std::vector<std::size_t> train, test;
  train_test_split(n, seed, train, test);

  EigenMat design(train.size(), k + 1);
  for (std::size_t r = 0; r < train.size(); ++r) {
    design(r, 0) = 1.0;
    for (std::size_t c = 0; c < k; ++c) design(r, c + 1) = z_hat(train[r], c);
  }
  EigenMat target(train.size(), z_true.cols());
  for (std::size_t r = 0; r < train.size(); ++r)
    for (std::size_t c = 0; c < z_true.cols(); ++c) target(r, c) = z_true(train[r], c);

  LinearFitResult out;
  Eigen::ColPivHouseholderQR<EigenMat> qr(design);
  qr.setThreshold(1e-10);
  out.degenerate = qr.rank() < static_cast<Eigen::Index>(k + 1);
  const EigenMat coef = qr.solve(target);

  for (std::size_t c = 0; c < z_true.cols(); ++c) {
    std::vector<double> pred(test.size()), obs(test.size());
    for (std::size_t r = 0; r < test.size(); ++r) {
      double v = coef(0, c);
      for (std::size_t j = 0; j < k; ++j) v += coef(j + 1, c) * z_hat(test[r], j);
      pred[r] = v;
      obs[r] = z_true(test[r], c);
    }
    out.r2.push_back(r2_score(pred, obs));
  }
  out.r2_mean = std::accumulate(out.r2.begin(), out.r2.end(), 0.0) / static_cast<double>(out.r2.size());
  return out;
}

namespace {

struct Standardizer {
  std::vector<double> mean, scale;

  Standardizer(const Matrix& x, const std::vector<std::size_t>& rows) : mean(x.cols(), 0.0), scale(x.cols(), 0.0) {
    for (std::size_t r : rows)
      for (std::size_t c = 0; c < x.cols(); ++c) mean[c] += x(r, c);
    for (double& m : mean) m /= static_cast<double>(rows.size());
    for (std::size_t r : rows)
      for (std::size_t c = 0; c < x.cols(); ++c) scale[c] += (x(r, c) - mean[c]) * (x(r, c) - mean[c]);
    for (double& s : scale) {
      s = std::sqrt(s / static_cast<double>(rows.size()));
      if (!(s > 0.0)) s = 1.0;
    }
  }

  Matrix apply(const Matrix& x, const std::vector<std::size_t>& rows) const {
    Matrix out(rows.size(), x.cols());
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = (x(rows[r], c) - mean[c]) / scale[c];
    return out;
  }
};

struct ProbeNet {
  std::size_t in, hidden, out;
  std::size_t w0, b0, w1, b1, w2, b2, total;

  ProbeNet(std::size_t i, std::size_t h, std::size_t o) : in(i), hidden(h), out(o) {
    w0 = 0;
    b0 = w0 + i * h;
    w1 = b0 + h;
    b1 = w1 + h * h;
    w2 = b1 + h;
    b2 = w2 + h * o;
    total = b2 + o;
  }

  Var forward(Tape& tape, Var x) const {
    Var h = tape.tanh(tape.add(tape.matmul(x, tape.parameter(w0, in, hidden)), tape.parameter(b0, 1, hidden)));
    h = tape.tanh(tape.add(tape.matmul(h, tape.parameter(w1, hidden, hidden)), tape.parameter(b1, 1, hidden)));
    return tape.add(tape.matmul(h, tape.parameter(w2, hidden, out)), tape.parameter(b2, 1, out));
  }
};

}  // namespace

ProbeReport probe_grounding(const Matrix& z_hat, const Matrix& z_true, const ProbeOptions& options) {
  if (z_hat.rows() != z_true.rows()) throw ValidationError("probe_grounding: row counts differ");
  if (z_hat.rows() < 50) {
    throw ValidationError("probe_grounding: need at least 50 rows, got " + std::to_string(z_hat.rows()));
  }
  if (options.epochs == 0 || options.batch_size == 0 || options.hidden == 0) {
    throw ValidationError("probe_grounding: epochs, batch size and width must be >= 1");
  }
  Rng rng(options.seed);
  std::vector<std::size_t> rows(z_hat.rows());
  std::iota(rows.begin(), rows.end(), 0);
  if (options.max_rows != 0 && rows.size() > options.max_rows) {
    const auto perm = rng.permutation(rows.size());
    rows.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(options.max_rows));
    std::sort(rows.begin(), rows.end());
  }
  std::vector<std::size_t> tr_idx, te_idx, train, test;
  train_test_split(rows.size(), derive_seed(options.seed, 1), tr_idx, te_idx);
  for (std::size_t i : tr_idx) train.push_back(rows[i]);
  for (std::size_t i : te_idx) test.push_back(rows[i]);

  const Standardizer sx(z_hat, train), sy(z_true, train);
  const Matrix x_train = sx.apply(z_hat, train), y_train = sy.apply(z_true, train);
  const Matrix x_test = sx.apply(z_hat, test), y_test = sy.apply(z_true, test);

  const ProbeNet net(z_hat.cols(), options.hidden, z_true.cols());
  std::vector<double> params(net.total, 0.0);
  auto init = [&](std::size_t offset, std::size_t fan_in, std::size_t count) {
    const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (std::size_t k = 0; k < count; ++k) params[offset + k] = s * rng.normal();
  };
  init(net.w0, net.in, net.in * net.hidden);
  init(net.w1, net.hidden, net.hidden * net.hidden);
  init(net.w2, net.hidden, net.hidden * net.out);

  AdamState adam(params.size(), AdamOptions{options.learning_rate});
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    const auto perm = rng.permutation(train.size());
    for (std::size_t start = 0; start < perm.size(); start += options.batch_size) {
      const std::size_t len = std::min(options.batch_size, perm.size() - start);
      std::vector<std::size_t> idx(perm.begin() + static_cast<std::ptrdiff_t>(start),
                                   perm.begin() + static_cast<std::ptrdiff_t>(start + len));
      Tape tape(params);
      Var pred = net.forward(tape, tape.constant(x_train.select_rows(idx)));
      Var loss = tape.mean(tape.square(tape.sub(pred, tape.constant(y_train.select_rows(idx)))));
      tape.backward(loss);
      adam.step(params, tape.parameter_gradient());
    }
  }

  Tape tape(params);
  const Matrix pred = tape.value(net.forward(tape, tape.constant(x_test)));
  ProbeReport out;
  out.seed = options.seed;
  for (std::size_t c = 0; c < z_true.cols(); ++c) {
    const auto p = pred.column_values(c);
    const auto o = y_test.column_values(c);
    out.r2.push_back(r2_score(p, o));
    out.spearman.push_back(spearman(p, o).value);
  }
  const double d = static_cast<double>(z_true.cols());
  out.r2_mean = std::accumulate(out.r2.begin(), out.r2.end(), 0.0) / d;
  out.spearman_mean = std::accumulate(out.spearman.begin(), out.spearman.end(), 0.0) / d;
  return out;
}

}  // namespace cdyn
