#pragma once

// Small dense matrices for the state-space blocks plus least-squares and
// eigenvalue helpers backed by Eigen. Model matrices here are tiny (a few
// rows), so products are written as plain loops with a fixed summation order.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "sskan/error.hpp"

namespace sskan {

using Vector = std::vector<double>;

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const double& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// out += m * x
inline void gemv_acc(const Matrix& m, std::span<const double> x, std::span<double> out) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    double acc = out[r];
    for (std::size_t c = 0; c < m.cols(); ++c) acc += m(r, c) * x[c];
    out[r] = acc;
  }
}

// out += mᵀ * x
inline void gemv_t_acc(const Matrix& m, std::span<const double> x, std::span<double> out) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const double xr = x[r];
    for (std::size_t c = 0; c < m.cols(); ++c) out[c] += m(r, c) * xr;
  }
}

// grad += a ⊗ b  (outer product)
inline void outer_acc(std::span<const double> a, std::span<const double> b, Matrix& grad) {
  for (std::size_t r = 0; r < grad.rows(); ++r)
    for (std::size_t c = 0; c < grad.cols(); ++c) grad(r, c) += a[r] * b[c];
}

inline double frobenius_sq(const Matrix& m) {
  double s = 0.0;
  for (double v : m.values()) s += v * v;
  return s;
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k)
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += a(i, k) * b(k, j);
  return out;
}

inline Eigen::MatrixXd to_eigen(const Matrix& m) {
  Eigen::MatrixXd e(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t c = 0; c < m.cols(); ++c) e(r, c) = m(r, c);
  return e;
}

inline double spectral_radius(const Matrix& m) {
  if (m.rows() == 0) return 0.0;
  Eigen::EigenSolver<Eigen::MatrixXd> solver(to_eigen(m), false);
  return solver.eigenvalues().cwiseAbs().maxCoeff();
}

// Dense least squares min ‖design·coef − target‖₂ via complete orthogonal
// decomposition, which returns the minimum-norm solution when rank deficient.
// `design` is row-major with `cols` columns.
struct LstsqResult {
  Vector coefficients;
  Eigen::Index rank = 0;
};

inline LstsqResult lstsq(std::span<const double> design, std::size_t cols,
                         std::span<const double> target) {
  const std::size_t rows = target.size();
  require(design.size() == rows * cols, "dimension-mismatch", "lstsq: design size mismatch");
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> a(
      design.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  Eigen::Map<const Eigen::VectorXd> b(target.data(), static_cast<Eigen::Index>(rows));
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(a);
  const Eigen::VectorXd x = cod.solve(b);
  return {Vector(x.data(), x.data() + x.size()), cod.rank()};
}

}  // namespace sskan
