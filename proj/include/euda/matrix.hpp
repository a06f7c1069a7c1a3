#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace euda {

// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  void fill(double v);
  bool all_finite() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Rows of `m` selected by `indices`, in the given order.
Matrix gather_rows(const Matrix& m, std::span<const std::size_t> indices);

// Stacks `top` over `bottom`; column counts must agree.
Matrix vstack(const Matrix& top, const Matrix& bottom);

// Y = X * W^T + bias (bias broadcast over rows). X: b x in, W: out x in.
void affine(const Matrix& x, const Matrix& w, std::span<const double> bias, Matrix& y);

// G += A^T * B. A: b x m, B: b x n, G: m x n.
void accumulate_at_b(const Matrix& a, const Matrix& b, Matrix& g);

// C = A * B. A: b x m, B: m x n.
void multiply(const Matrix& a, const Matrix& b, Matrix& c);

// Column sums of `m` accumulated into `out`.
void accumulate_col_sums(const Matrix& m, std::span<double> out);

}  // namespace euda
