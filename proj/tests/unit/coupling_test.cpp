#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "cdyn/coupling.hpp"
#include "cdyn/rng.hpp"

namespace cdyn {
namespace {

void expect_marginals(const SinkhornResult& r, double tol) {
  const std::size_t n = r.plan.rows(), m = r.plan.cols();
  double row = 0.0, col = 0.0;
  std::vector<double> cs(m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      s += r.plan(i, j);
      cs[j] += r.plan(i, j);
    }
    row += std::abs(s - 1.0 / n);
  }
  for (double c : cs) col += std::abs(c - 1.0 / m);
  EXPECT_LE(row, tol);
  EXPECT_LE(col, tol);
}

TEST(Independent, SingletonRepeats) {
  CouplingPlan p = independent_coupling(1, 1, 5, 3);
  ASSERT_EQ(p.size(), 5u);
  for (std::size_t k = 0; k < 5; ++k) {
    EXPECT_EQ(p.src[k], 0u);
    EXPECT_EQ(p.dst[k], 0u);
  }
}

TEST(Independent, Deterministic) {
  CouplingPlan a = independent_coupling(10, 7, 50, 42), b = independent_coupling(10, 7, 50, 42);
  EXPECT_EQ(a.src, b.src);
  EXPECT_EQ(a.dst, b.dst);
}

TEST(Independent, UniformSourceMarginal) {
  const std::size_t n = 10, pairs = 100000;
  CouplingPlan p = independent_coupling(n, 4, pairs, 7);
  p.validate(n, 4);
  std::vector<double> count(n, 0.0);
  for (std::size_t s : p.src) count[s] += 1.0;
  const double expect = static_cast<double>(pairs) / n;
  const double se = std::sqrt(pairs * (1.0 / n) * (1.0 - 1.0 / n));
  for (double c : count) EXPECT_NEAR(c, expect, 3.0 * se);
}

TEST(Independent, EmptyPopulationThrows) {
  EXPECT_THROW(independent_coupling(0, 3, 4, 1), ValidationError);
}

TEST(Plan, ValidateCatchesBadWeights) {
  CouplingPlan p = independent_coupling(3, 3, 4, 1);
  p.weights[0] = 0.9;
  EXPECT_THROW(p.validate(3, 3), ValidationError);
  CouplingPlan q = independent_coupling(3, 3, 4, 1);
  q.dst[1] = 3;
  EXPECT_THROW(q.validate(3, 3), ValidationError);
}

TEST(Plan, JsonRoundTrip) {
  CouplingPlan p = independent_coupling(6, 5, 9, 2);
  CouplingPlan q = CouplingPlan::from_json(p.to_json());
  EXPECT_EQ(p.src, q.src);
  EXPECT_EQ(p.dst, q.dst);
  EXPECT_EQ(p.weights, q.weights);
}

TEST(Sinkhorn, ZeroCostIsOuterProduct) {
  SinkhornResult r = sinkhorn_plan(Matrix(4, 6), {0.05, 10000, 1e-6});
  for (double v : r.plan.data()) EXPECT_NEAR(v, 1.0 / 24.0, 1e-9);
}

TEST(Sinkhorn, TwoByTwoFavorsDiagonal) {
  Matrix c{{0.0, 1.0}, {1.0, 0.0}};
  SinkhornResult r = sinkhorn_plan(c, {0.1, 10000, 1e-10});
  EXPECT_GT(r.plan(0, 0) + r.plan(1, 1), r.plan(0, 1) + r.plan(1, 0));
  // With uniform marginals the 2x2 plan is [[a, 1/2 - a], [1/2 - a, a]].
  // Grid-minimize <P, C> + eps sum P log P over a.
  double best_a = 0.0, best = 1e300;
  for (int k = 1; k < 200000; ++k) {
    const double a = 0.5 * k / 200000.0, b = 0.5 - a;
    const double f = 2.0 * b + 0.1 * 2.0 * (a * std::log(a) + b * std::log(b));
    if (f < best) {
      best = f;
      best_a = a;
    }
  }
  EXPECT_NEAR(r.plan(0, 0), best_a, 1e-5);
}

TEST(Sinkhorn, ConvergedPlansMeetTolerance) {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    Matrix a = rng.normal_matrix(20 + trial, 3), b = rng.normal_matrix(15, 3);
    Matrix cost = squared_euclidean_cost(a, b);
    SinkhornResult r = sinkhorn_plan(cost, {0.05 * median_entry(cost), 10000, 1e-6});
    expect_marginals(r, 1e-6);
    EXPECT_LE(std::max(r.row_violation, r.col_violation), 1e-6);
  }
}

TEST(Sinkhorn, ConstantShiftInvariance) {
  Rng rng(6);
  Matrix cost = squared_euclidean_cost(rng.normal_matrix(12, 2), rng.normal_matrix(9, 2));
  Matrix shifted = cost;
  for (double& v : shifted.data()) v += 7.5;
  const double eps = 0.1 * median_entry(cost);
  SinkhornResult a = sinkhorn_plan(cost, {eps, 10000, 1e-10});
  SinkhornResult b = sinkhorn_plan(shifted, {eps, 10000, 1e-10});
  for (std::size_t k = 0; k < a.plan.size(); ++k) EXPECT_NEAR(a.plan.data()[k], b.plan.data()[k], 1e-8);
}

TEST(Sinkhorn, SmallEpsilonStaysFinite) {
  Rng rng(7);
  Matrix x = rng.normal_matrix(30, 2);
  Matrix cost = squared_euclidean_cost(x, x);
  // exp(-C / eps) underflows for almost every entry at this epsilon.
  SinkhornResult r = sinkhorn_plan(cost, {1e-4 * median_entry(cost), 10000, 1e-6});
  EXPECT_TRUE(r.plan.all_finite());
  expect_marginals(r, 1e-6);
}

TEST(Sinkhorn, NonConvergenceReportsViolation) {
  Rng rng(8);
  Matrix cost = squared_euclidean_cost(rng.normal_matrix(30, 2), rng.normal_matrix(30, 2));
  try {
    sinkhorn_plan(cost, {1e-3 * median_entry(cost), 2, 1e-12});
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("violation"), std::string::npos);
  }
}

TEST(Sinkhorn, RejectsBadInput) {
  EXPECT_THROW(sinkhorn_plan(Matrix(0, 3), {}), ValidationError);
  EXPECT_THROW(sinkhorn_plan(Matrix(2, 2), {0.0, 10, 1e-6}), ValidationError);
}

TEST(Crossfit, IdenticalPopulationsPairWithThemselves) {
  Rng rng(9);
  Matrix x = rng.normal_matrix(25, 4);
  Matrix cost = squared_euclidean_cost(x, x);
  SinkhornResult r = sinkhorn_plan(cost, {1e-3 * median_entry(cost), 10000, 1e-6});
  for (std::size_t i = 0; i < x.rows(); ++i) {
    // Nearest-neighbour oracle: each cell's own copy is at distance 0.
    std::size_t best = 0;
    for (std::size_t j = 1; j < x.rows(); ++j) {
      if (r.plan(i, j) > r.plan(i, best)) best = j;
    }
    EXPECT_EQ(best, i);
  }
}

TEST(Crossfit, IndependentModeReproducible) {
  Rng rng(9);
  Matrix a = rng.normal_matrix(8, 3), b = rng.normal_matrix(6, 3);
  CrossfitOptions o;
  o.method = CouplingMethod::kIndependent;
  CouplingPlan p = crossfit_coupling(a, b, o, 4), q = crossfit_coupling(a, b, o, 4);
  EXPECT_EQ(p.src, q.src);
  EXPECT_EQ(p.dst, q.dst);
}

TEST(Crossfit, SingletonControlTakesEveryCell) {
  Rng rng(9);
  Matrix a = rng.normal_matrix(8, 3), b = rng.normal_matrix(1, 3);
  CouplingPlan p = crossfit_coupling(a, b, {}, 4);
  p.validate(8, 1);
  for (std::size_t d : p.dst) EXPECT_EQ(d, 0u);
}

TEST(Crossfit, SinkhornPlanIsValid) {
  Rng rng(10);
  Matrix a = rng.normal_matrix(20, 3), b = rng.normal_matrix(30, 3);
  CouplingPlan p = crossfit_coupling(a, b, {}, 4);
  p.validate(20, 30);
  EXPECT_EQ(p.size(), 20u);
  EXPECT_EQ(p.method, CouplingMethod::kSinkhorn);
}

}  // namespace
}  // namespace cdyn
