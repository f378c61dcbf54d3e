#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace nowcast {

// Dense row-major matrix of doubles. Everything in this project is small
// (state dimensions stay well below ~50), so the kernels favour clarity
// over blocking tricks. All operations are pure value-semantic functions.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix diagonal(std::span<const double> d);
  static Matrix column(std::span<const double> v);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> flat() { return data_; }
  std::span<const double> flat() const { return data_; }
  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  bool all_finite() const;

  Matrix& operator+=(const Matrix& o);
  Matrix& operator-=(const Matrix& o);
  Matrix& operator*=(double s);

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);
Matrix operator*(double s, Matrix a);

// Standard product, shape (a.rows, b.cols). Throws DimensionError naming
// both shapes when a.cols != b.rows.
Matrix matmul(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& a);

// 0.5 * (a + a^T), used to suppress symmetry drift in covariance updates.
Matrix symmetrized(const Matrix& a);

// Cholesky factorization a = L L^T of a symmetric positive definite matrix.
// Throws NotSpdError carrying the failing pivot index.
class Cholesky {
 public:
  explicit Cholesky(const Matrix& a);
  const Matrix& lower() const { return l_; }
  double log_det() const;
  // Solves a x = b for each column of b.
  Matrix solve(const Matrix& b) const;

 private:
  Matrix l_;
};

// x with a x = b, via Cholesky. Shapes checked.
Matrix solve_spd(const Matrix& a, const Matrix& b);

struct SymEig {
  std::vector<double> values;  // descending
  Matrix vectors;              // column i pairs with values[i]; orthonormal
};

// Cyclic Jacobi eigensolver for a symmetric matrix. Throws DimensionError
// if the input is asymmetric beyond 1e-10.
SymEig sym_eig(const Matrix& a);

double dot(std::span<const double> a, std::span<const double> b);
double max_abs(const Matrix& a);

}  // namespace nowcast
