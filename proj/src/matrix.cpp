#include "macg/matrix.hpp"

#include <cmath>
#include <string>

#include "macg/errors.hpp"

namespace macg::ad {

namespace {

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

Matrix::Matrix(int rows, int cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
  if (data_.size() != static_cast<size_t>(rows) * cols) {
    throw DimensionError("Matrix: value count does not match " +
                         std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix Matrix::identity(int n) {
  Matrix m(n, n);
  for (int i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::filled(int rows, int cols, double value) {
  Matrix m(rows, cols);
  for (auto& v : m.values()) v = value;
  return m;
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  int r = static_cast<int>(rows.size());
  int c = r > 0 ? static_cast<int>(rows.begin()->size()) : 0;
  Matrix m(r, c);
  int i = 0;
  for (const auto& row : rows) {
    if (static_cast<int>(row.size()) != c) {
      throw DimensionError("Matrix::from_rows: ragged rows");
    }
    int j = 0;
    for (double v : row) m(i, j++) = v;
    ++i;
  }
  return m;
}

bool Matrix::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

bool same_shape(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols();
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + shape_str(a) + " by " + shape_str(b));
  }
  Matrix c(a.rows(), b.cols());
  matmul_nn_acc(c, a, b);
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: " + shape_str(a) + " by " + shape_str(b) + "^T");
  }
  Matrix c(a.rows(), b.rows());
  matmul_nt_acc(c, a, b);
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw DimensionError("matmul_tn: " + shape_str(a) + "^T by " + shape_str(b));
  }
  Matrix c(a.cols(), b.cols());
  matmul_tn_acc(c, a, b);
  return c;
}

void matmul_nn_acc(Matrix& dst, const Matrix& a, const Matrix& b) {
  const int n = a.rows(), k = a.cols(), m = b.cols();
  const double* ap = a.values().data();
  const double* bp = b.values().data();
  double* cp = dst.values().data();
  for (int i = 0; i < n; ++i) {
    const double* arow = ap + static_cast<size_t>(i) * k;
    double* crow = cp + static_cast<size_t>(i) * m;
    for (int t = 0; t < k; ++t) {
      double av = arow[t];
      if (av == 0.0) continue;
      const double* brow = bp + static_cast<size_t>(t) * m;
      for (int j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

void matmul_nt_acc(Matrix& dst, const Matrix& a, const Matrix& b) {
  const int n = a.rows(), k = a.cols(), m = b.rows();
  const double* ap = a.values().data();
  const double* bp = b.values().data();
  double* cp = dst.values().data();
  for (int i = 0; i < n; ++i) {
    const double* arow = ap + static_cast<size_t>(i) * k;
    double* crow = cp + static_cast<size_t>(i) * m;
    for (int j = 0; j < m; ++j) {
      const double* brow = bp + static_cast<size_t>(j) * k;
      double acc = 0.0;
      for (int t = 0; t < k; ++t) acc += arow[t] * brow[t];
      crow[j] += acc;
    }
  }
}

void matmul_tn_acc(Matrix& dst, const Matrix& a, const Matrix& b) {
  const int k = a.rows(), n = a.cols(), m = b.cols();
  const double* ap = a.values().data();
  const double* bp = b.values().data();
  double* cp = dst.values().data();
  for (int t = 0; t < k; ++t) {
    const double* arow = ap + static_cast<size_t>(t) * n;
    const double* brow = bp + static_cast<size_t>(t) * m;
    for (int i = 0; i < n; ++i) {
      double av = arow[i];
      if (av == 0.0) continue;
      double* crow = cp + static_cast<size_t>(i) * m;
      for (int j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

Matrix add(const Matrix& a, const Matrix& b) {
  if (!same_shape(a, b)) throw DimensionError("add: " + shape_str(a) + " vs " + shape_str(b));
  Matrix c = a;
  axpy(c, b, 1.0);
  return c;
}

Matrix sub(const Matrix& a, const Matrix& b) {
  if (!same_shape(a, b)) throw DimensionError("sub: " + shape_str(a) + " vs " + shape_str(b));
  Matrix c = a;
  axpy(c, b, -1.0);
  return c;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  if (!same_shape(a, b)) {
    throw DimensionError("hadamard: " + shape_str(a) + " vs " + shape_str(b));
  }
  Matrix c = a;
  for (size_t i = 0; i < c.size(); ++i) c.values()[i] *= b.values()[i];
  return c;
}

Matrix scale(const Matrix& a, double k) {
  Matrix c = a;
  for (auto& v : c.values()) v *= k;
  return c;
}

double sum(const Matrix& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return s;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (!same_shape(a, b)) {
    throw DimensionError("max_abs_diff: " + shape_str(a) + " vs " + shape_str(b));
  }
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    double d = std::fabs(a.values()[i] - b.values()[i]);
    if (d > m) m = d;
  }
  return m;
}

void axpy(Matrix& dst, const Matrix& src, double k) {
  if (!same_shape(dst, src)) {
    throw DimensionError("axpy: " + shape_str(dst) + " vs " + shape_str(src));
  }
  double* d = dst.values().data();
  const double* s = src.values().data();
  const size_t n = dst.size();
  if (k == 1.0) {
    for (size_t i = 0; i < n; ++i) d[i] += s[i];
  } else {
    for (size_t i = 0; i < n; ++i) d[i] += k * s[i];
  }
}

}  // namespace macg::ad
