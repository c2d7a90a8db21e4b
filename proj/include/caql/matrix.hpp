#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "caql/errors.hpp"

namespace caql {

// Row-major dense matrix; the single numeric carrier for features,
// parameters, gradients and distance matrices.
struct DenseMatrix {
  std::size_t rows{0};
  std::size_t cols{0};
  std::vector<double> data;  // length rows*cols

  DenseMatrix() = default;
  DenseMatrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  static DenseMatrix identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  double& operator()(std::size_t r, std::size_t c) {
    return data[r * cols + c];
  }
  double operator()(std::size_t r, std::size_t c) const {
    return data[r * cols + c];
  }

  std::size_t size() const { return data.size(); }

  std::string shape_str() const {
    return std::to_string(rows) + "x" + std::to_string(cols);
  }

  bool same_shape(const DenseMatrix& o) const {
    return rows == o.rows && cols == o.cols;
  }

  bool all_finite() const {
    for (double v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

inline DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols != b.rows)
    throw DimensionError("matmul: dimension mismatch " + a.shape_str() +
                         " * " + b.shape_str());
  DenseMatrix out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols; ++j) out(i, j) += aik * b(k, j);
    }
  }
  return out;
}

inline DenseMatrix transpose(const DenseMatrix& a) {
  DenseMatrix out(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) out(j, i) = a(i, j);
  return out;
}

inline void add_inplace(DenseMatrix& a, const DenseMatrix& b,
                        double scale = 1.0) {
  if (!a.same_shape(b))
    throw DimensionError("add: dimension mismatch " + a.shape_str() + " + " +
                         b.shape_str());
  for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += scale * b.data[i];
}

inline double frobenius_norm(const DenseMatrix& a) {
  double s = 0.0;
  for (double v : a.data) s += v * v;
  return std::sqrt(s);
}

inline double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
  if (!a.same_shape(b))
    throw DimensionError("max_abs_diff: dimension mismatch " + a.shape_str() +
                         " vs " + b.shape_str());
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i)
    m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

}  // namespace caql
