#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "cdyn/matrix.hpp"

namespace cdyn {

/// Handle to a node recorded on a Tape.
struct Var {
  std::uint32_t id = UINT32_MAX;
  bool valid() const { return id != UINT32_MAX; }
};

enum class OpKind : std::uint8_t {
  kParameter,
  kConstant,
  kMatMul,
  kAdd,
  kMul,
  kTanh,
  kLeakyRelu,
  kExp,
  kLog,
  kSquare,
  kSum,
  kMean,
  kConcat,
  kSlice,
  kSoftplus,
};

std::string_view op_name(OpKind kind);

enum class Axis : std::uint8_t { kRows, kCols };

inline constexpr double kLeakySlope = 0.2;

/// Reverse-mode tape over a closed operator set.
///
/// Recording is eager: each op computes and caches its value as it is
/// appended, so building the graph is the forward pass. Nodes only
/// reference earlier nodes. Parameter leaves are views into the flat
/// parameter vector passed at construction; backward() accumulates their
/// gradients into a vector aligned with that parameter vector.
///
/// Binary elementwise ops (add, mul) broadcast an operand whose row or
/// column count is 1.
class Tape {
 public:
  explicit Tape(std::span<const double> params);

  Var parameter(std::size_t offset, std::size_t rows, std::size_t cols);
  Var constant(Matrix value);

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var tanh(Var a);
  Var leaky_relu(Var a);
  Var exp(Var a);
  Var log(Var a);
  Var square(Var a);
  Var softplus(Var a);
  Var sum(Var a);
  Var mean(Var a);
  Var concat(std::span<const Var> parts, Axis axis);
  Var slice(Var a, std::size_t r0, std::size_t nr, std::size_t c0, std::size_t nc);

  // Compositions of the primitives above.
  Var scale(Var a, double s);
  Var sub(Var a, Var b);
  Var add_scalar(Var a, double s);

  const Matrix& value(Var v) const;
  double scalar(Var v) const;
  OpKind kind(Var v) const;
  std::size_t size() const { return nodes_.size(); }
  std::size_t num_params() const { return params_.size(); }

  /// Fills gradient slots for every node reachable from `loss` (a 1x1 node).
  void backward(Var loss);
  bool has_gradients() const { return backward_done_; }

  /// Gradient of the loss w.r.t. a recorded node; throws before backward().
  const Matrix& gradient(Var v) const;
  /// Gradient w.r.t. the flat parameter vector; throws before backward().
  const std::vector<double>& parameter_gradient() const;

 private:
  struct Node {
    OpKind kind;
    std::uint32_t a = UINT32_MAX;
    std::uint32_t b = UINT32_MAX;
    std::vector<std::uint32_t> parts{};  // concat inputs
    std::size_t offset = 0;            // parameter offset, slice row start
    std::size_t aux = 0;               // slice column start
    Axis axis = Axis::kCols;
    Matrix value;
  };

  Var push(Node node);
  const Node& node(Var v) const;
  [[noreturn]] void shape_error(OpKind kind, const Matrix& a, const Matrix& b) const;
  Var elementwise_binary(OpKind kind, Var a, Var b);
  Var unary(OpKind kind, Var a, Matrix out);

  std::span<const double> params_;
  std::vector<Node> nodes_;
  std::vector<Matrix> grads_;
  std::vector<double> param_grad_;
  bool backward_done_ = false;
};

/// A loss assembled on a tape: records ops on `tape` reading parameters
/// from the tape's parameter vector and returns the scalar loss node.
using LossBuilder = std::function<Var(Tape&)>;

struct ForwardResult {
  double loss = 0.0;
  std::vector<double> gradient;
};

/// Records the loss on a fresh tape (forward), returns the loss value.
double tape_forward(const LossBuilder& build, std::span<const double> params);
/// Forward plus backward; gradient aligned with `params`.
ForwardResult tape_value_and_gradient(const LossBuilder& build, std::span<const double> params);

namespace testing {

/// While alive, every tape recorded on this thread negates the backward
/// rule of `kind`. Used to check that gradient verification catches a
/// broken rule.
class ScopedBackwardFault {
 public:
  explicit ScopedBackwardFault(OpKind kind);
  ~ScopedBackwardFault();
  ScopedBackwardFault(const ScopedBackwardFault&) = delete;
  ScopedBackwardFault& operator=(const ScopedBackwardFault&) = delete;

 private:
  int previous_;
};

}  // namespace testing

}  // namespace cdyn
