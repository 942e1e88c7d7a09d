#pragma once
#include <cstddef>
#include <vector>

#include "pb/errors.hpp"

namespace pb {

// Dense row-major matrix of doubles.
struct Mat {
  int rows = 0, cols = 0;
  std::vector<double> a;

  Mat() = default;
  Mat(int r, int c, double fill = 0.0) : rows(r), cols(c), a(static_cast<size_t>(r) * c, fill) {}

  double& operator()(int i, int j) { return a[static_cast<size_t>(i) * cols + j]; }
  double operator()(int i, int j) const { return a[static_cast<size_t>(i) * cols + j]; }

  Mat transposed() const {
    Mat t(cols, rows);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  double row_sum(int i) const {
    double s = 0.0;
    for (int j = 0; j < cols; ++j) s += (*this)(i, j);
    return s;
  }
  double col_sum(int j) const {
    double s = 0.0;
    for (int i = 0; i < rows; ++i) s += (*this)(i, j);
    return s;
  }
  double sum() const {
    double s = 0.0;
    for (double v : a) s += v;
    return s;
  }
};

inline void require_same_shape(const Mat& x, const Mat& y, const char* what) {
  if (x.rows != y.rows || x.cols != y.cols)
    throw DimensionError(std::string(what) + ": shape mismatch");
}

}  // namespace pb
