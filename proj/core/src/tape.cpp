#include "cdyn/tape.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace cdyn {

namespace {

thread_local int g_faulty_op = -1;

std::size_t bcast_dim(std::size_t x, std::size_t y, bool& ok) {
  if (x == y) return x;
  if (x == 1) return y;
  if (y == 1) return x;
  ok = false;
  return 0;
}

// Sums `g` down to shape (rows, cols), undoing a broadcast.
Matrix reduce_to(const Matrix& g, std::size_t rows, std::size_t cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  Matrix out(rows, cols);
  for (std::size_t r = 0; r < g.rows(); ++r) {
    const std::size_t rr = rows == 1 ? 0 : r;
    for (std::size_t c = 0; c < g.cols(); ++c) {
      out(rr, cols == 1 ? 0 : c) += g(r, c);
    }
  }
  return out;
}

void accumulate(Matrix& slot, const Matrix& g) {
  if (slot.empty()) {
    slot = g;
    return;
  }
  auto dst = slot.data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

double softplus_value(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kParameter: return "parameter";
    case OpKind::kConstant: return "constant";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kMul: return "mul";
    case OpKind::kTanh: return "tanh";
    case OpKind::kLeakyRelu: return "leaky_relu";
    case OpKind::kExp: return "exp";
    case OpKind::kLog: return "log";
    case OpKind::kSquare: return "square";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kConcat: return "concat";
    case OpKind::kSlice: return "slice";
    case OpKind::kSoftplus: return "softplus";
  }
  return "unknown";
}

Tape::Tape(std::span<const double> params) : params_(params) {}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  backward_done_ = false;
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Tape::Node& Tape::node(Var v) const {
  if (v.id >= nodes_.size()) {
    throw ValidationError("tape: reference to unknown node " + std::to_string(v.id));
  }
  return nodes_[v.id];
}

void Tape::shape_error(OpKind kind, const Matrix& a, const Matrix& b) const {
  throw ValidationError("tape: shape mismatch at node " + std::to_string(nodes_.size()) + " (" +
                        std::string(op_name(kind)) + "): " + a.shape_string() + " vs " +
                        b.shape_string());
}

Var Tape::parameter(std::size_t offset, std::size_t rows, std::size_t cols) {
  if (offset + rows * cols > params_.size()) {
    throw ValidationError("tape: parameter block [" + std::to_string(offset) + ", " +
                          std::to_string(offset + rows * cols) +
                          ") exceeds parameter vector of length " +
                          std::to_string(params_.size()));
  }
  std::vector<double> data(params_.begin() + static_cast<std::ptrdiff_t>(offset),
                           params_.begin() + static_cast<std::ptrdiff_t>(offset + rows * cols));
  Node n{.kind = OpKind::kParameter, .offset = offset, .value = Matrix(rows, cols, std::move(data))};
  return push(std::move(n));
}

Var Tape::constant(Matrix value) {
  return push(Node{.kind = OpKind::kConstant, .value = std::move(value)});
}

Var Tape::matmul(Var a, Var b) {
  const Matrix& va = node(a).value;
  const Matrix& vb = node(b).value;
  if (va.cols() != vb.rows()) shape_error(OpKind::kMatMul, va, vb);
  return push(Node{.kind = OpKind::kMatMul, .a = a.id, .b = b.id, .value = cdyn::matmul(va, vb)});
}

Var Tape::elementwise_binary(OpKind kind, Var a, Var b) {
  const Matrix& va = node(a).value;
  const Matrix& vb = node(b).value;
  bool ok = true;
  const std::size_t rows = bcast_dim(va.rows(), vb.rows(), ok);
  const std::size_t cols = bcast_dim(va.cols(), vb.cols(), ok);
  if (!ok) shape_error(kind, va, vb);
  Matrix out(rows, cols);
  const bool ar = va.rows() == 1, ac = va.cols() == 1;
  const bool br = vb.rows() == 1, bc = vb.cols() == 1;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double x = va(ar ? 0 : r, ac ? 0 : c);
      const double y = vb(br ? 0 : r, bc ? 0 : c);
      out(r, c) = kind == OpKind::kAdd ? x + y : x * y;
    }
  }
  return push(Node{.kind = kind, .a = a.id, .b = b.id, .value = std::move(out)});
}

Var Tape::add(Var a, Var b) { return elementwise_binary(OpKind::kAdd, a, b); }
Var Tape::mul(Var a, Var b) { return elementwise_binary(OpKind::kMul, a, b); }

Var Tape::unary(OpKind kind, Var a, Matrix out) {
  return push(Node{.kind = kind, .a = a.id, .value = std::move(out)});
}

Var Tape::tanh(Var a) {
  Matrix out = node(a).value;
  for (double& v : out.data()) v = std::tanh(v);
  return unary(OpKind::kTanh, a, std::move(out));
}

Var Tape::leaky_relu(Var a) {
  Matrix out = node(a).value;
  for (double& v : out.data()) v = v > 0.0 ? v : kLeakySlope * v;
  return unary(OpKind::kLeakyRelu, a, std::move(out));
}

Var Tape::exp(Var a) {
  Matrix out = node(a).value;
  for (double& v : out.data()) v = std::exp(v);
  return unary(OpKind::kExp, a, std::move(out));
}

Var Tape::log(Var a) {
  Matrix out = node(a).value;
  for (double& v : out.data()) {
    if (!(v > 0.0)) {
      throw NumericError("tape: log of non-positive value at node " +
                         std::to_string(nodes_.size()));
    }
    v = std::log(v);
  }
  return unary(OpKind::kLog, a, std::move(out));
}

Var Tape::square(Var a) {
  Matrix out = node(a).value;
  for (double& v : out.data()) v = v * v;
  return unary(OpKind::kSquare, a, std::move(out));
}

Var Tape::softplus(Var a) {
  Matrix out = node(a).value;
  for (double& v : out.data()) v = softplus_value(v);
  return unary(OpKind::kSoftplus, a, std::move(out));
}

Var Tape::sum(Var a) {
  double s = 0.0;
  for (double v : node(a).value.data()) s += v;
  return unary(OpKind::kSum, a, Matrix::scalar(s));
}

Var Tape::mean(Var a) {
  const Matrix& va = node(a).value;
  if (va.empty()) throw ValidationError("tape: mean of empty matrix");
  double s = 0.0;
  for (double v : va.data()) s += v;
  return unary(OpKind::kMean, a, Matrix::scalar(s / static_cast<double>(va.size())));
}

Var Tape::concat(std::span<const Var> parts, Axis axis) {
  if (parts.empty()) throw ValidationError("tape: concat of zero inputs");
  std::vector<Matrix> values;
  std::vector<std::uint32_t> ids;
  values.reserve(parts.size());
  for (Var p : parts) {
    values.push_back(node(p).value);
    ids.push_back(p.id);
  }
  for (const auto& v : values) {
    const bool ok = axis == Axis::kCols ? v.rows() == values.front().rows()
                                        : v.cols() == values.front().cols();
    if (!ok) shape_error(OpKind::kConcat, values.front(), v);
  }
  Matrix out = axis == Axis::kCols ? hstack(values) : vstack(values);
  return push(Node{.kind = OpKind::kConcat, .parts = std::move(ids), .axis = axis,
                   .value = std::move(out)});
}

Var Tape::slice(Var a, std::size_t r0, std::size_t nr, std::size_t c0, std::size_t nc) {
  const Matrix& va = node(a).value;
  if (r0 + nr > va.rows() || c0 + nc > va.cols()) {
    throw ValidationError("tape: slice out of range at node " + std::to_string(nodes_.size()) +
                          " on " + va.shape_string());
  }
  return push(Node{.kind = OpKind::kSlice, .a = a.id, .offset = r0, .aux = c0,
                   .value = va.block(r0, c0, nr, nc)});
}

Var Tape::scale(Var a, double s) { return mul(a, constant(Matrix::scalar(s))); }
Var Tape::sub(Var a, Var b) { return add(a, scale(b, -1.0)); }
Var Tape::add_scalar(Var a, double s) { return add(a, constant(Matrix::scalar(s))); }

const Matrix& Tape::value(Var v) const { return node(v).value; }

double Tape::scalar(Var v) const {
  const Matrix& m = node(v).value;
  if (m.size() != 1) throw ValidationError("tape: node is not a scalar " + m.shape_string());
  return m(0, 0);
}

OpKind Tape::kind(Var v) const { return node(v).kind; }

void Tape::backward(Var loss) {
  if (nodes_.empty()) throw ValidationError("tape: backward on an empty tape");
  if (node(loss).value.size() != 1) {
    throw ValidationError("tape: backward requires a scalar loss, got " +
                          node(loss).value.shape_string());
  }
  grads_.assign(nodes_.size(), Matrix{});
  param_grad_.assign(params_.size(), 0.0);
  grads_[loss.id] = Matrix::scalar(1.0);

  for (std::size_t i = loss.id + 1; i-- > 0;) {
    if (grads_[i].empty()) continue;
    const Node& n = nodes_[i];
    Matrix g = grads_[i];
    if (g_faulty_op == static_cast<int>(n.kind)) {
      for (double& v : g.data()) v = -v;
    }
    switch (n.kind) {
      case OpKind::kParameter: {
        auto src = g.data();
        for (std::size_t k = 0; k < src.size(); ++k) param_grad_[n.offset + k] += src[k];
        break;
      }
      case OpKind::kConstant:
        break;
      case OpKind::kMatMul: {
        const Matrix& va = nodes_[n.a].value;
        const Matrix& vb = nodes_[n.b].value;
        accumulate(grads_[n.a], matmul_nt(g, vb));
        accumulate(grads_[n.b], matmul_tn(va, g));
        break;
      }
      case OpKind::kAdd: {
        const Matrix& va = nodes_[n.a].value;
        const Matrix& vb = nodes_[n.b].value;
        accumulate(grads_[n.a], reduce_to(g, va.rows(), va.cols()));
        accumulate(grads_[n.b], reduce_to(g, vb.rows(), vb.cols()));
        break;
      }
      case OpKind::kMul: {
        const Matrix& va = nodes_[n.a].value;
        const Matrix& vb = nodes_[n.b].value;
        Matrix ga(g.rows(), g.cols());
        Matrix gb(g.rows(), g.cols());
        const bool ar = va.rows() == 1, ac = va.cols() == 1;
        const bool br = vb.rows() == 1, bc = vb.cols() == 1;
        for (std::size_t r = 0; r < g.rows(); ++r) {
          for (std::size_t c = 0; c < g.cols(); ++c) {
            ga(r, c) = g(r, c) * vb(br ? 0 : r, bc ? 0 : c);
            gb(r, c) = g(r, c) * va(ar ? 0 : r, ac ? 0 : c);
          }
        }
        accumulate(grads_[n.a], reduce_to(ga, va.rows(), va.cols()));
        accumulate(grads_[n.b], reduce_to(gb, vb.rows(), vb.cols()));
        break;
      }
      case OpKind::kTanh: {
        auto y = n.value.data();
        auto gd = g.data();
        for (std::size_t k = 0; k < gd.size(); ++k) gd[k] *= 1.0 - y[k] * y[k];
        accumulate(grads_[n.a], g);
        break;
      }
      case OpKind::kLeakyRelu: {
        auto x = nodes_[n.a].value.data();
        auto gd = g.data();
        for (std::size_t k = 0; k < gd.size(); ++k) gd[k] *= x[k] > 0.0 ? 1.0 : kLeakySlope;
        accumulate(grads_[n.a], g);
        break;
      }
      case OpKind::kExp: {
        auto y = n.value.data();
        auto gd = g.data();
        for (std::size_t k = 0; k < gd.size(); ++k) gd[k] *= y[k];
        accumulate(grads_[n.a], g);
        break;
      }
      case OpKind::kLog: {
        auto x = nodes_[n.a].value.data();
        auto gd = g.data();
        for (std::size_t k = 0; k < gd.size(); ++k) gd[k] /= x[k];
        accumulate(grads_[n.a], g);
        break;
      }
      case OpKind::kSquare: {
        auto x = nodes_[n.a].value.data();
        auto gd = g.data();
        for (std::size_t k = 0; k < gd.size(); ++k) gd[k] *= 2.0 * x[k];
        accumulate(grads_[n.a], g);
        break;
      }
      case OpKind::kSoftplus: {
        auto x = nodes_[n.a].value.data();
        auto gd = g.data();
        for (std::size_t k = 0; k < gd.size(); ++k) gd[k] *= sigmoid(x[k]);
        accumulate(grads_[n.a], g);
        break;
      }
      case OpKind::kSum:
      case OpKind::kMean: {
        const Matrix& va = nodes_[n.a].value;
        double s = g(0, 0);
        if (n.kind == OpKind::kMean) s /= static_cast<double>(va.size());
        accumulate(grads_[n.a], Matrix(va.rows(), va.cols(), s));
        break;
      }
      case OpKind::kConcat: {
        std::size_t offset = 0;
        for (std::uint32_t p : n.parts) {
          const Matrix& vp = nodes_[p].value;
          if (n.axis == Axis::kCols) {
            accumulate(grads_[p], g.block(0, offset, vp.rows(), vp.cols()));
            offset += vp.cols();
          } else {
            accumulate(grads_[p], g.block(offset, 0, vp.rows(), vp.cols()));
            offset += vp.rows();
          }
        }
        break;
      }
      case OpKind::kSlice: {
        const Matrix& va = nodes_[n.a].value;
        Matrix full(va.rows(), va.cols());
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < g.cols(); ++c) full(n.offset + r, n.aux + c) = g(r, c);
        accumulate(grads_[n.a], full);
        break;
      }
    }
  }
  backward_done_ = true;
}

const Matrix& Tape::gradient(Var v) const {
  if (!backward_done_) throw ValidationError("tape: gradient requested before backward()");
  static const Matrix kEmpty;
  node(v);
  return grads_[v.id].empty() ? kEmpty : grads_[v.id];
}

const std::vector<double>& Tape::parameter_gradient() const {
  if (!backward_done_) throw ValidationError("tape: gradient requested before backward()");
  return param_grad_;
}

double tape_forward(const LossBuilder& build, std::span<const double> params) {
  Tape tape(params);
  return tape.scalar(build(tape));
}

ForwardResult tape_value_and_gradient(const LossBuilder& build, std::span<const double> params) {
  Tape tape(params);
  Var loss = build(tape);
  tape.backward(loss);
  return {tape.scalar(loss), tape.parameter_gradient()};
}

namespace testing {

ScopedBackwardFault::ScopedBackwardFault(OpKind kind) : previous_(g_faulty_op) {
  g_faulty_op = static_cast<int>(kind);
}

ScopedBackwardFault::~ScopedBackwardFault() { g_faulty_op = previous_; }

}  // namespace testing

}  // namespace cdyn
