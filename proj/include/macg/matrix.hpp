#pragma once

#include <cassert>
#include <cstddef>
#include <initializer_list>
#include <vector>

namespace macg::ad {

/// Dense row-major matrix of doubles. Column vectors are n x 1, row vectors
/// 1 x n. All model math runs in 64-bit precision.
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols)
      : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows) * cols, 0.0) {}
  Matrix(int rows, int cols, std::vector<double> values);

  static Matrix identity(int n);
  static Matrix filled(int rows, int cols, double value);
  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(int r, int c) {
    assert(r >= 0 && r < rows_ && c >= 0 && c < cols_);
    return data_[static_cast<size_t>(r) * cols_ + c];
  }
  double operator()(int r, int c) const {
    assert(r >= 0 && r < rows_ && c >= 0 && c < cols_);
    return data_[static_cast<size_t>(r) * cols_ + c];
  }

  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  bool all_finite() const;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

bool same_shape(const Matrix& a, const Matrix& b);

Matrix matmul(const Matrix& a, const Matrix& b);     // a * b
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // a * b^T
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // a^T * b
Matrix transpose(const Matrix& a);
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double k);
double sum(const Matrix& a);
double max_abs_diff(const Matrix& a, const Matrix& b);

// dst += k * src; shapes must match
void axpy(Matrix& dst, const Matrix& src, double k);
void matmul_nn_acc(Matrix& dst, const Matrix& a, const Matrix& b);
void matmul_nt_acc(Matrix& dst, const Matrix& a, const Matrix& b);
void matmul_tn_acc(Matrix& dst, const Matrix& a, const Matrix& b);

}  // namespace macg::ad
