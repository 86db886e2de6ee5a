#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "cdyn/adam.hpp"
#include "cdyn/gradcheck.hpp"
#include "cdyn/matrix.hpp"
#include "cdyn/rng.hpp"
#include "cdyn/tape.hpp"

namespace cdyn {
namespace {

// Loss builder over a 3-layer tanh network with inputs drawn from `seed`.
LossBuilder random_net(std::uint64_t seed, std::size_t in, std::size_t hidden) {
  Rng rng(seed);
  Matrix x = rng.normal_matrix(4, in);
  return [x, in, hidden](Tape& t) {
    std::size_t off = 0;
    auto p = [&](std::size_t r, std::size_t c) {
      Var v = t.parameter(off, r, c);
      off += r * c;
      return v;
    };
    Var h = t.constant(x);
    h = t.tanh(t.add(t.matmul(h, p(in, hidden)), p(1, hidden)));
    h = t.tanh(t.add(t.matmul(h, p(hidden, hidden)), p(1, hidden)));
    Var out = t.matmul(h, p(hidden, 1));
    return t.sum(t.square(out));
  };
}

std::size_t net_size(std::size_t in, std::size_t hidden) {
  return in * hidden + hidden + hidden * hidden + hidden + hidden;
}

DifferentiableFn as_fn(const LossBuilder& b) {
  return [b](std::span<const double> p) {
    ForwardResult r = tape_value_and_gradient(b, p);
    return LossAndGradient{r.loss, r.gradient};
  };
}

TEST(Tape, IdentityHoldsValue) {
  std::vector<double> p{1.0, 2.0};
  Tape t(p);
  Var x = t.parameter(0, 1, 2);
  EXPECT_EQ(t.value(x), Matrix({{1.0, 2.0}}));
}

TEST(Tape, SumOfSquares) {
  std::vector<double> p{3.0};
  Tape t(p);
  Var loss = t.sum(t.square(t.parameter(0, 1, 1)));
  EXPECT_DOUBLE_EQ(t.scalar(loss), 9.0);
  t.backward(loss);
  EXPECT_DOUBLE_EQ(t.parameter_gradient()[0], 6.0);
}

TEST(Tape, SumGradientIsOnes) {
  std::vector<double> p{0.3, -1.0, 7.0};
  Tape t(p);
  Var loss = t.sum(t.parameter(0, 1, 3));
  t.backward(loss);
  for (double g : t.parameter_gradient()) EXPECT_EQ(g, 1.0);
}

TEST(Tape, GradientBeforeBackwardThrows) {
  std::vector<double> p{1.0};
  Tape t(p);
  Var loss = t.sum(t.parameter(0, 1, 1));
  EXPECT_THROW(t.gradient(loss), ValidationError);
  EXPECT_THROW(t.parameter_gradient(), ValidationError);
}

TEST(Tape, ShapeMismatchNamesOp) {
  std::vector<double> p(6, 1.0);
  Tape t(p);
  Var a = t.parameter(0, 2, 3);
  try {
    t.matmul(a, a);
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("matmul"), std::string::npos) << e.what();
  }
}

TEST(Tape, ForwardIsBitIdentical) {
  const std::size_t n = net_size(3, 5);
  Rng rng(7);
  std::vector<double> p = rng.normal_vector(n);
  auto b = random_net(7, 3, 5);
  EXPECT_EQ(tape_forward(b, p), tape_forward(b, p));
}

TEST(Tape, RandomNetMatchesFiniteDifferences) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const std::size_t n = net_size(3, 6);
    Rng rng(seed);
    std::vector<double> p = rng.normal_vector(n);
    auto r = finite_diff_check(as_fn(random_net(seed, 3, 6)), p, 1e-5);
    EXPECT_LE(r.max_relative_error, 1e-4) << "seed " << seed;
  }
}

// Every op in the closed set, one at a time, against central differences.
TEST(Tape, EachOpMatchesFiniteDifferences) {
  Rng rng(11);
  Matrix c = rng.normal_matrix(2, 3);
  std::vector<std::function<Var(Tape&, Var, Var)>> ops = {
      [](Tape& t, Var a, Var) { return t.tanh(a); },
      [](Tape& t, Var a, Var) { return t.leaky_relu(a); },
      [](Tape& t, Var a, Var) { return t.exp(a); },
      [](Tape& t, Var a, Var) { return t.log(t.add_scalar(t.square(a), 1.0)); },
      [](Tape& t, Var a, Var) { return t.softplus(a); },
      [](Tape& t, Var a, Var b) { return t.mul(a, b); },
      [](Tape& t, Var a, Var b) { return t.add(a, b); },
      [](Tape& t, Var a, Var) { return t.mean(a); },
      [](Tape& t, Var a, Var b) { return t.matmul(a, t.slice(t.concat(std::vector<Var>{b, b}, Axis::kRows), 0, 3, 0, 2)); },
      [](Tape& t, Var a, Var b) { return t.concat(std::vector<Var>{a, b}, Axis::kCols); },
      [](Tape& t, Var a, Var) { return t.slice(a, 1, 1, 1, 2); },
      [&](Tape& t, Var a, Var) { return t.mul(a, t.constant(c)); },
      [](Tape& t, Var a, Var b) { return t.add(a, t.slice(b, 0, 1, 0, 3)); },  // row broadcast
  };
  for (std::size_t k = 0; k < ops.size(); ++k) {
    LossBuilder b = [&, k](Tape& t) {
      Var a = t.parameter(0, 2, 3);
      Var bb = t.parameter(6, 2, 3);
      Var out = ops[k](t, a, bb);
      return t.sum(t.square(t.tanh(out)));
    };
    std::vector<double> p = rng.normal_vector(12);
    auto r = finite_diff_check(as_fn(b), p, 1e-5);
    EXPECT_LE(r.max_relative_error, 1e-6) << "op " << k;
  }
}

TEST(Tape, FaultInjectionIsCaught) {
  const std::size_t n = net_size(3, 4);
  Rng rng(5);
  std::vector<double> p = rng.normal_vector(n);
  testing::ScopedBackwardFault fault(OpKind::kTanh);
  auto r = finite_diff_check(as_fn(random_net(5, 3, 4)), p, 1e-5);
  EXPECT_GT(r.max_relative_error, 1e-2);
}

TEST(FiniteDiff, Quadratic) {
  DifferentiableFn f = [](std::span<const double> p) {
    return LossAndGradient{p[0] * p[0], {2.0 * p[0]}};
  };
  std::vector<double> x{3.0};
  EXPECT_LE(finite_diff_check(f, x, 1e-5).max_relative_error, 1e-8);
}

TEST(FiniteDiff, TanhAgainstSech2) {
  DifferentiableFn f = [](std::span<const double> p) {
    const double c = std::cosh(p[0]);
    return LossAndGradient{std::tanh(p[0]), {1.0 / (c * c)}};
  };
  std::vector<double> x{0.5};
  EXPECT_LE(finite_diff_check(f, x, 1e-5).max_relative_error, 1e-6);
}

TEST(FiniteDiff, Constant) {
  DifferentiableFn f = [](std::span<const double>) { return LossAndGradient{4.0, {0.0, 0.0}}; };
  std::vector<double> x{1.0, 2.0};
  auto r = finite_diff_check(f, x, 1e-5);
  EXPECT_EQ(r.max_relative_error, 0.0);
}

TEST(FiniteDiff, NonFiniteLossThrows) {
  DifferentiableFn f = [](std::span<const double> p) {
    return LossAndGradient{std::log(p[0]), {1.0 / p[0]}};
  };
  std::vector<double> x{0.0};
  EXPECT_THROW(finite_diff_check(f, x, 1e-5), NumericError);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  AdamState s(2, {.learning_rate = 0.1});
  std::vector<double> p{1.0, -1.0}, g{0.5, -2.0};
  s.step(p, g);
  // Bias-corrected first step is lr * sign(g) up to epsilon.
  EXPECT_NEAR(p[0], 0.9, 1e-6);
  EXPECT_NEAR(p[1], -0.9, 1e-6);
  EXPECT_EQ(s.step_count(), 1u);
}

TEST(Adam, ZeroInitializedMoments) {
  AdamState s(3);
  for (double v : s.first_moment()) EXPECT_EQ(v, 0.0);
  for (double v : s.second_moment()) EXPECT_EQ(v, 0.0);
}

TEST(Adam, NonFiniteGradientNamesCoordinate) {
  AdamState s(3);
  std::vector<double> p{1.0, 2.0, 3.0}, g{0.0, NAN, 0.0};
  try {
    s.step(p, g);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("1"), std::string::npos);
  }
  EXPECT_EQ(p[1], 2.0);
  EXPECT_EQ(s.step_count(), 0u);
}

TEST(Adam, MinimizesQuadratic) {
  AdamState s(1, {.learning_rate = 0.05});
  std::vector<double> p{4.0};
  for (int i = 0; i < 2000; ++i) {
    std::vector<double> g{2.0 * (p[0] - 1.0)};
    s.step(p, g);
  }
  EXPECT_NEAR(p[0], 1.0, 1e-3);
}

TEST(Matrix, RejectsBadShapes) {
  EXPECT_THROW(Matrix(2, 2, std::vector<double>{1.0}), ValidationError);
  EXPECT_THROW(matmul(Matrix(2, 3), Matrix(2, 3)), ValidationError);
}

}  // namespace
}  // namespace cdyn
