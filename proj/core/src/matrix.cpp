#include "cdyn/matrix.hpp"

#include <Eigen/Dense>

#include <cmath>

namespace cdyn {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

ConstMap view(const Matrix& m) {
  return ConstMap(m.data().data(), static_cast<Eigen::Index>(m.rows()),
                  static_cast<Eigen::Index>(m.cols()));
}

MutMap view(Matrix& m) {
  return MutMap(m.data().data(), static_cast<Eigen::Index>(m.rows()),
                static_cast<Eigen::Index>(m.cols()));
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(data.begin(), data.end()) {
  if (data_.size() != rows_ * cols_) {
    throw ValidationError("matrix data length " + std::to_string(data_.size()) +
                          " does not match shape " + shape_string());
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ValidationError("ragged matrix initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::row(std::span<const double> values) {
  return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

Matrix Matrix::column(std::span<const double> values) {
  return Matrix(values.size(), 1, std::vector<double>(values.begin(), values.end()));
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

bool Matrix::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Matrix::shape_string() const {
  return "(" + std::to_string(rows_) + "x" + std::to_string(cols_) + ")";
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

Matrix Matrix::select_rows(std::span<const std::size_t> indices) const {
  Matrix out(indices.size(), cols_);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= rows_) throw ValidationError("row index out of range");
    auto src = row_span(indices[i]);
    std::copy(src.begin(), src.end(), out.row_span(i).begin());
  }
  return out;
}

Matrix Matrix::select_cols(std::span<const std::size_t> indices) const {
  Matrix out(rows_, indices.size());
  for (std::size_t j = 0; j < indices.size(); ++j) {
    if (indices[j] >= cols_) throw ValidationError("column index out of range");
  }
  for (std::size_t r = 0; r < rows_; ++r)
    for (std::size_t j = 0; j < indices.size(); ++j) out(r, j) = (*this)(r, indices[j]);
  return out;
}

Matrix Matrix::block(std::size_t r0, std::size_t c0, std::size_t nr, std::size_t nc) const {
  if (r0 + nr > rows_ || c0 + nc > cols_) {
    throw ValidationError("block out of range for matrix " + shape_string());
  }
  Matrix out(nr, nc);
  for (std::size_t r = 0; r < nr; ++r)
    for (std::size_t c = 0; c < nc; ++c) out(r, c) = (*this)(r0 + r, c0 + c);
  return out;
}

std::vector<double> Matrix::column_values(std::size_t c) const {
  std::vector<double> out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
  return out;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ValidationError("matmul shape mismatch " + a.shape_string() + " * " +
                          b.shape_string());
  }
  Matrix c(a.rows(), b.cols());
  if (c.empty()) return c;
  view(c).noalias() = view(a) * view(b);
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw ValidationError("matmul_tn shape mismatch " + a.shape_string() + "^T * " +
                          b.shape_string());
  }
  Matrix c(a.cols(), b.cols());
  if (c.empty()) return c;
  view(c).noalias() = view(a).transpose() * view(b);
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ValidationError("matmul_nt shape mismatch " + a.shape_string() + " * " +
                          b.shape_string() + "^T");
  }
  Matrix c(a.rows(), b.rows());
  if (c.empty()) return c;
  view(c).noalias() = view(a) * view(b).transpose();
  return c;
}

Matrix vstack(std::span<const Matrix> parts) {
  if (parts.empty()) return {};
  std::size_t rows = 0;
  const std::size_t cols = parts.front().cols();
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ValidationError("vstack column mismatch");
    rows += p.rows();
  }
  std::vector<double> data;
  data.reserve(rows * cols);
  for (const auto& p : parts) data.insert(data.end(), p.data().begin(), p.data().end());
  return Matrix(rows, cols, std::move(data));
}

Matrix hstack(std::span<const Matrix> parts) {
  if (parts.empty()) return {};
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ValidationError("hstack row mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t offset = 0;
    for (const auto& p : parts) {
      auto src = p.row_span(r);
      std::copy(src.begin(), src.end(), out.row_span(r).begin() + offset);
      offset += p.cols();
    }
  }
  return out;
}

Matrix column_means(const Matrix& m) {
  Matrix out(1, m.cols());
  if (m.rows() == 0) return out;
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) out(0, c) += m(r, c);
  for (std::size_t c = 0; c < m.cols(); ++c) out(0, c) /= static_cast<double>(m.rows());
  return out;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("squared_distance length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace cdyn
