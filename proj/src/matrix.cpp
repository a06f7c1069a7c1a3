#include "euda/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "euda/error.hpp"
#include "euda/simd/kernels.hpp"

namespace euda {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
  if (data_.size() != rows * cols) {
    throw ContractError("matrix storage has " + std::to_string(data_.size()) + " values, expected " +
                        std::to_string(rows * cols));
  }
}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Matrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> indices) {
  Matrix out(indices.size(), m.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= m.rows()) throw ContractError("gather_rows: index out of range");
    std::copy_n(m.row(indices[i]).data(), m.cols(), out.row(i).data());
  }
  return out;
}

Matrix vstack(const Matrix& top, const Matrix& bottom) {
  if (top.cols() != bottom.cols()) throw ContractError("vstack: column counts differ");
  Matrix out(top.rows() + bottom.rows(), top.cols());
  std::copy_n(top.data(), top.size(), out.data());
  std::copy_n(bottom.data(), bottom.size(), out.data() + top.size());
  return out;
}

void affine(const Matrix& x, const Matrix& w, std::span<const double> bias, Matrix& y) {
  if (x.cols() != w.cols() || bias.size() != w.rows()) throw ContractError("affine: shape mismatch");
  if (y.rows() != x.rows() || y.cols() != w.rows()) y = Matrix(x.rows(), w.rows());
  const auto& k = simd::active();
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double* xi = x.row(i).data();
    double* yi = y.row(i).data();
    for (std::size_t o = 0; o < w.rows(); ++o) {
      yi[o] = k.dot(xi, w.row(o).data(), x.cols()) + bias[o];
    }
  }
}

void accumulate_at_b(const Matrix& a, const Matrix& b, Matrix& g) {
  if (a.rows() != b.rows() || g.rows() != a.cols() || g.cols() != b.cols()) {
    throw ContractError("accumulate_at_b: shape mismatch");
  }
  const auto& k = simd::active();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* bi = b.row(i).data();
    for (std::size_t m = 0; m < a.cols(); ++m) {
      const double s = a(i, m);
      if (s != 0.0) k.axpy(s, bi, g.row(m).data(), b.cols());
    }
  }
}

void multiply(const Matrix& a, const Matrix& b, Matrix& c) {
  if (a.cols() != b.rows()) throw ContractError("multiply: shape mismatch");
  c = Matrix(a.rows(), b.cols());
  const auto& k = simd::active();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* ci = c.row(i).data();
    for (std::size_t m = 0; m < a.cols(); ++m) {
      const double s = a(i, m);
      if (s != 0.0) k.axpy(s, b.row(m).data(), ci, b.cols());
    }
  }
}

void accumulate_col_sums(const Matrix& m, std::span<double> out) {
  if (out.size() != m.cols()) throw ContractError("accumulate_col_sums: shape mismatch");
  const auto& k = simd::active();
  for (std::size_t i = 0; i < m.rows(); ++i) k.axpy(1.0, m.row(i).data(), out.data(), m.cols());
}

}  // namespace euda
