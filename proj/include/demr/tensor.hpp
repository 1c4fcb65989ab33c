#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "demr/errors.hpp"

namespace demr {

// Dense row-major matrix of doubles; the only tensor shape in this codebase.
// A 1x1 tensor doubles as a scalar, a 1xC tensor as a row vector.
struct Tensor2D {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Tensor2D() = default;
  Tensor2D(int r, int c) : rows(r), cols(c) {
    if (r < 0 || c < 0) throw ValidationError("Tensor2D: negative shape");
    data.assign(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), 0.0);
  }

  static Tensor2D zeros(int r, int c) { return Tensor2D(r, c); }

  static Tensor2D full(int r, int c, double v) {
    Tensor2D t(r, c);
    for (double& x : t.data) x = v;
    return t;
  }

  static Tensor2D scalar(double v) { return full(1, 1, v); }

  static Tensor2D identity(int n) {
    Tensor2D t(n, n);
    for (int i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
  }

  double& at(int r, int c) {
    return data[static_cast<std::size_t>(r) * cols + c];
  }
  double at(int r, int c) const {
    return data[static_cast<std::size_t>(r) * cols + c];
  }

  std::size_t size() const { return data.size(); }

  bool same_shape(const Tensor2D& o) const {
    return rows == o.rows && cols == o.cols;
  }

  std::string shape_str() const {
    return std::to_string(rows) + "x" + std::to_string(cols);
  }

  bool all_finite() const {
    for (double x : data)
      if (!std::isfinite(x)) return false;
    return true;
  }

  void fill(double v) {
    for (double& x : data) x = v;
  }

  // this += s * o
  void axpy(double s, const Tensor2D& o) {
    if (!same_shape(o))
      throw ValidationError("Tensor2D::axpy shape mismatch: " + shape_str() +
                            " vs " + o.shape_str());
    for (std::size_t i = 0; i < data.size(); ++i) data[i] += s * o.data[i];
  }
};

}  // namespace demr
