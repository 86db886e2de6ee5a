#include "cdyn/coupling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "cdyn/rng.hpp"

namespace cdyn {

std::string_view to_string(CouplingMethod m) {
  return m == CouplingMethod::kSinkhorn ? "sinkhorn" : "independent";
}

CouplingMethod parse_coupling_method(std::string_view text) {
  if (text == "independent") return CouplingMethod::kIndependent;
  if (text == "sinkhorn") return CouplingMethod::kSinkhorn;
  throw ValidationError("unknown coupling method '" + std::string(text) + "'");
}

void CouplingPlan::validate(std::size_t n_src, std::size_t n_dst) const {
  if (src.size() != dst.size() || src.size() != weights.size()) {
    throw ValidationError("coupling plan: src, dst and weights lengths differ");
  }
  double total = 0.0;
  for (std::size_t k = 0; k < src.size(); ++k) {
    if (src[k] >= n_src || dst[k] >= n_dst) {
      throw ValidationError("coupling plan: pair " + std::to_string(k) + " out of bounds");
    }
    if (!(weights[k] >= 0.0)) throw ValidationError("coupling plan: negative weight");
    total += weights[k];
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ValidationError("coupling plan: weights sum to " + std::to_string(total));
  }
}

std::string CouplingPlan::to_json() const {
  nlohmann::json j = {{"src", src}, {"dst", dst}, {"w", weights}, {"method", to_string(method)}};
  return j.dump();
}

CouplingPlan CouplingPlan::from_json(const std::string& text) {
  try {
    auto j = nlohmann::json::parse(text);
    CouplingPlan plan;
    plan.src = j.at("src").get<std::vector<std::size_t>>();
    plan.dst = j.at("dst").get<std::vector<std::size_t>>();
    plan.weights = j.at("w").get<std::vector<double>>();
    plan.method = parse_coupling_method(j.at("method").get<std::string>());
    return plan;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("coupling plan: ") + e.what());
  }
}

CouplingPlan independent_coupling(std::size_t n_src, std::size_t n_dst, std::size_t n_pairs,
                                  std::uint64_t seed) {
  if (n_src == 0 || n_dst == 0) throw ValidationError("independent_coupling: empty population");
  if (n_pairs == 0) throw ValidationError("independent_coupling: n_pairs must be >= 1");
  Rng rng(seed);
  CouplingPlan plan;
  plan.method = CouplingMethod::kIndependent;
  plan.src.resize(n_pairs);
  plan.dst.resize(n_pairs);
  plan.weights.assign(n_pairs, 1.0 / static_cast<double>(n_pairs));
  for (std::size_t k = 0; k < n_pairs; ++k) {
    plan.src[k] = rng.index(n_src);
    plan.dst[k] = rng.index(n_dst);
  }
  return plan;
}

namespace {

double log_sum_exp(const double* values, std::size_t n, std::size_t stride) {
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < n; ++k) mx = std::max(mx, values[k * stride]);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (std::size_t k = 0; k < n; ++k) s += std::exp(values[k * stride] - mx);
  return mx + std::log(s);
}

}  // namespace

SinkhornResult sinkhorn_plan(const Matrix& cost, const SinkhornOptions& options) {
  const std::size_t n = cost.rows(), m = cost.cols();
  if (n == 0 || m == 0) throw ValidationError("sinkhorn: empty cost matrix");
  if (!(options.epsilon > 0.0)) throw ValidationError("sinkhorn: epsilon must be positive");
  if (!cost.all_finite()) throw ValidationError("sinkhorn: non-finite cost");
  const double eps = options.epsilon;
  const double a = 1.0 / static_cast<double>(n);
  const double b = 1.0 / static_cast<double>(m);
  const double log_a = std::log(a), log_b = std::log(b);

  // Exact log-domain half steps give well-scaled initial potentials.
  std::vector<double> f(n, 0.0), g(m, 0.0), work(std::max(n, m));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) work[j] = (g[j] - cost(i, j)) / eps;
    f[i] = eps * (log_a - log_sum_exp(work.data(), m, 1));
  }
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t i = 0; i < n; ++i) work[i] = (f[i] - cost(i, j)) / eps;
    g[j] = eps * (log_b - log_sum_exp(work.data(), n, 1));
  }

  Matrix kernel(n, m);
  auto rebuild = [&] {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) kernel(i, j) = std::exp((f[i] + g[j] - cost(i, j)) / eps);
  };
  rebuild();

  std::vector<double> u(n, 1.0), v(m, 1.0), kv(n), ktu(m);
  constexpr double kAbsorb = 1e50;
  SinkhornResult result;

  auto marginals = [&](double& row_viol, double& col_viol) {
    row_viol = 0.0;
    col_viol = 0.0;
    std::fill(ktu.begin(), ktu.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        const double pij = u[i] * kernel(i, j) * v[j];
        s += pij;
        ktu[j] += pij;
      }
      row_viol += std::abs(s - a);
    }
    for (std::size_t j = 0; j < m; ++j) col_viol += std::abs(ktu[j] - b);
  };

  double row_viol = 0.0, col_viol = 0.0;
  marginals(row_viol, col_viol);
  std::size_t iter = 0;
  // Each sweep ends on a column update, so the column marginals hold up to
  // rounding and the row violation falls out of the next K v product.
  bool have_kv = false;
  while (true) {
    if (have_kv) {
      row_viol = 0.0;
      for (std::size_t i = 0; i < n; ++i) row_viol += std::abs(u[i] * kv[i] - a);
      col_viol = 0.0;
      if (!std::isfinite(row_viol)) {
        throw NumericError("sinkhorn: non-finite marginals at iteration " + std::to_string(iter));
      }
      result.violation_history.push_back(row_viol);
    }
    if (std::max(row_viol, col_viol) <= options.tol) break;
    if (iter == options.max_iters) {
      throw NumericError("sinkhorn: no convergence after " + std::to_string(iter) +
                         " iterations; marginal violation " +
                         std::to_string(std::max(row_viol, col_viol)));
    }
    ++iter;
    if (!have_kv) {
      for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < m; ++j) s += kernel(i, j) * v[j];
        kv[i] = s;
      }
    }
    for (std::size_t i = 0; i < n; ++i) u[i] = a / kv[i];
    std::fill(ktu.begin(), ktu.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double ui = u[i];
      for (std::size_t j = 0; j < m; ++j) ktu[j] += kernel(i, j) * ui;
    }
    for (std::size_t j = 0; j < m; ++j) v[j] = b / ktu[j];

    bool absorb = false;
    for (double x : u) absorb = absorb || !(x < kAbsorb && x > 1.0 / kAbsorb);
    for (double x : v) absorb = absorb || !(x < kAbsorb && x > 1.0 / kAbsorb);
    if (absorb) {
      for (std::size_t i = 0; i < n; ++i) f[i] += eps * std::log(u[i]);
      for (std::size_t j = 0; j < m; ++j) g[j] += eps * std::log(v[j]);
      std::fill(u.begin(), u.end(), 1.0);
      std::fill(v.begin(), v.end(), 1.0);
      rebuild();
    }
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += kernel(i, j) * v[j];
      kv[i] = s;
    }
    have_kv = true;
  }

  marginals(row_viol, col_viol);
  result.plan = Matrix(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) result.plan(i, j) = u[i] * kernel(i, j) * v[j];
  result.iterations = iter;
  result.row_violation = row_viol;
  result.col_violation = col_viol;
  return result;
}

CouplingPlan sample_from_plan(const Matrix& plan, std::size_t n_pairs, std::uint64_t seed,
                              CouplingMethod method) {
  if (plan.empty()) throw ValidationError("sample_from_plan: empty plan");
  if (n_pairs == 0) throw ValidationError("sample_from_plan: n_pairs must be >= 1");
  std::vector<double> cdf(plan.size());
  std::partial_sum(plan.data().begin(), plan.data().end(), cdf.begin());
  const double total = cdf.back();
  if (!(total > 0.0)) throw NumericError("sample_from_plan: plan has no mass");
  Rng rng(seed);
  CouplingPlan out;
  out.method = method;
  out.weights.assign(n_pairs, 1.0 / static_cast<double>(n_pairs));
  out.src.reserve(n_pairs);
  out.dst.reserve(n_pairs);
  for (std::size_t k = 0; k < n_pairs; ++k) {
    const double r = rng.uniform(0.0, total);
    auto it = std::upper_bound(cdf.begin(), cdf.end(), r);
    std::size_t flat = static_cast<std::size_t>(it - cdf.begin());
    flat = std::min(flat, plan.size() - 1);
    out.src.push_back(flat / plan.cols());
    out.dst.push_back(flat % plan.cols());
  }
  return out;
}

CouplingPlan sinkhorn_coupling(const Matrix& cost, const SinkhornOptions& options,
                               std::size_t n_pairs, std::uint64_t seed) {
  const SinkhornResult r = sinkhorn_plan(cost, options);
  return sample_from_plan(r.plan, n_pairs, seed, CouplingMethod::kSinkhorn);
}

Matrix squared_euclidean_cost(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw ValidationError("squared_euclidean_cost: feature mismatch");
  Matrix c(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) c(i, j) = squared_distance(a.row_span(i), b.row_span(j));
  return c;
}

double median_entry(const Matrix& m) {
  if (m.empty()) throw ValidationError("median_entry: empty matrix");
  std::vector<double> v(m.data().begin(), m.data().end());
  auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

CouplingPlan crossfit_coupling(const Matrix& pert, const Matrix& ctrl,
                               const CrossfitOptions& options, std::uint64_t seed) {
  if (pert.rows() == 0 || ctrl.rows() == 0) throw ValidationError("crossfit_coupling: empty population");
  const std::size_t n_pairs = options.n_pairs == 0 ? pert.rows() : options.n_pairs;
  if (options.method == CouplingMethod::kIndependent || ctrl.rows() == 1) {
    CouplingPlan plan = independent_coupling(pert.rows(), ctrl.rows(), n_pairs, seed);
    plan.method = options.method;
    return plan;
  }
  const Matrix cost = squared_euclidean_cost(pert, ctrl);
  double scale = median_entry(cost);
  if (!(scale > 0.0)) scale = 1.0;
  SinkhornOptions so{options.epsilon_scale * scale, options.max_iters, options.tol};
  return sinkhorn_coupling(cost, so, n_pairs, seed);
}

}  // namespace cdyn
