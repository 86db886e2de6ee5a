#pragma once

#include <cstddef>
#include <initializer_list>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cdyn {

/// Error raised for malformed inputs: shape mismatches, unknown ids, bad files.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Error raised when a numerical procedure fails at run time
/// (non-finite values, non-convergence).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense row-major matrix of doubles.
/// Cache-line aligned storage. Vectorized kernels pick their loop peeling
/// from the data address; a fixed alignment keeps results bit-identical
/// across allocations.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

class Matrix {
 public:
  using Storage = std::vector<double, AlignedAllocator<double>>;

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix row(std::span<const double> values);
  static Matrix column(std::span<const double> values);
  static Matrix scalar(double v) { return Matrix(1, 1, v); }
  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<double> row_span(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row_span(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }
  std::vector<double> values() const { return {data_.begin(), data_.end()}; }

  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  bool all_finite() const;
  std::string shape_string() const;

  Matrix transposed() const;
  Matrix select_rows(std::span<const std::size_t> indices) const;
  Matrix select_cols(std::span<const std::size_t> indices) const;
  Matrix block(std::size_t r0, std::size_t c0, std::size_t nr, std::size_t nc) const;
  std::vector<double> column_values(std::size_t c) const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Storage data_;
};

/// C = A * B.
Matrix matmul(const Matrix& a, const Matrix& b);
/// C = A^T * B.
Matrix matmul_tn(const Matrix& a, const Matrix& b);
/// C = A * B^T.
Matrix matmul_nt(const Matrix& a, const Matrix& b);

Matrix vstack(std::span<const Matrix> parts);
Matrix hstack(std::span<const Matrix> parts);

/// Column means, as a 1 x cols matrix.
Matrix column_means(const Matrix& m);

double squared_distance(std::span<const double> a, std::span<const double> b);

}  // namespace cdyn
