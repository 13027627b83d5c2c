#pragma once

// Dense row-major 64-bit matrices and the value-level kernels shared by the
// autodiff tape and the plain (non-differentiated) evaluation paths.

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace node_adapter::tensor {

/// Live/peak byte counters for matrix storage. Used by tests that assert the
/// adjoint pass keeps a step-count independent working set.
struct AllocationStats {
  std::size_t live_bytes = 0;
  std::size_t peak_bytes = 0;
};

AllocationStats allocation_stats() noexcept;
/// Reset the peak to the current live size.
void reset_allocation_peak() noexcept;

namespace detail {
void note_alloc(std::size_t bytes) noexcept;
void note_free(std::size_t bytes) noexcept;

template <class T>
struct CountingAllocator {
  using value_type = T;
  CountingAllocator() noexcept = default;
  template <class U>
  CountingAllocator(const CountingAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    note_alloc(n * sizeof(T));
    return std::allocator<T>{}.allocate(n);
  }
  void deallocate(T* p, std::size_t n) noexcept {
    note_free(n * sizeof(T));
    std::allocator<T>{}.deallocate(p, n);
  }
  template <class U>
  bool operator==(const CountingAllocator<U>&) const noexcept {
    return true;
  }
};
}  // namespace detail

using Storage = std::vector<double, detail::CountingAllocator<double>>;

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::span<const double> values);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix row_vector(std::span<const double> values);
  static Matrix column_vector(std::span<const double> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }
  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }

  std::span<const double> values() const noexcept { return {data_.data(), data_.size()}; }
  std::span<double> values() noexcept { return {data_.data(), data_.size()}; }
  std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }

  const double* data() const noexcept { return data_.data(); }
  double* data() noexcept { return data_.data(); }

  /// "rows x cols", used in error messages.
  std::string shape_string() const;

  bool operator==(const Matrix& other) const noexcept;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Storage data_;
};

enum class Axis { Rows, Cols };

// Shape checks throw ShapeError naming both operands.
void require_same_shape(const Matrix& a, const Matrix& b, const char* op);

Matrix matmul(const Matrix& a, const Matrix& b);
/// a * b^T
Matrix matmul_nt(const Matrix& a, const Matrix& b);
/// a^T * b
Matrix matmul_tn(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);

Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& m, double s);
/// a += s * b
void axpy(Matrix& a, double s, const Matrix& b);

/// Softmax along `axis`: Axis::Cols normalises each row over its columns,
/// Axis::Rows normalises each column over its rows. Max-subtracted.
Matrix softmax_axis(const Matrix& m, Axis axis);
Matrix sigmoid(const Matrix& m);
double sigmoid(double x) noexcept;
Matrix relu(const Matrix& m);

/// Throws DegenerateInputError naming the first row whose norm is <= 1e-12.
Matrix l2_normalize_rows(const Matrix& m);
std::vector<double> row_norms(const Matrix& m);

double sum(const Matrix& m);
double max_abs(const Matrix& m);
double max_abs_diff(const Matrix& a, const Matrix& b);
bool all_finite(const Matrix& m) noexcept;

/// Cosine similarity of every row of `a` against every row of `b` (a.rows x b.rows).
Matrix cosine_similarity(const Matrix& a, const Matrix& b);

}  // namespace node_adapter::tensor

namespace node_adapter {
using tensor::Matrix;
}
