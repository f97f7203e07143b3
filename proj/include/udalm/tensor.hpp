#ifndef UDALM_TENSOR_HPP
#define UDALM_TENSOR_HPP

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "udalm/errors.hpp"

namespace udalm {

// Dense row-major matrix of doubles. Vectors are 1 x n; scalars 1 x 1.
struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<double> v;
  bool requires_grad = false;

  Tensor() = default;
  Tensor(int r, int c) : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, 0.0) {}
  Tensor(int r, int c, std::vector<double> data) : rows(r), cols(c), v(std::move(data)) {
    if (v.size() != static_cast<std::size_t>(r) * c)
      throw ShapeError("tensor data length " + std::to_string(v.size()) +
                       " does not match shape " + std::to_string(r) + "x" + std::to_string(c));
  }

  static Tensor scalar(double x) {
    Tensor t(1, 1);
    t.v[0] = x;
    return t;
  }

  double& at(int r, int c) { return v[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return v[static_cast<std::size_t>(r) * cols + c]; }
  std::size_t size() const { return v.size(); }
  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
  std::string shape_str() const { return std::to_string(rows) + "x" + std::to_string(cols); }

  bool all_finite() const {
    for (double x : v)
      if (!std::isfinite(x)) return false;
    return true;
  }

  void fill(double x) {
    for (double& e : v) e = x;
  }
};

// C += A * B
inline void matmul_acc(const Tensor& a, const Tensor& b, Tensor& c) {
  const int n = a.rows, k = a.cols, m = b.cols;
  for (int i = 0; i < n; ++i) {
    const double* ai = &a.v[static_cast<std::size_t>(i) * k];
    double* ci = &c.v[static_cast<std::size_t>(i) * m];
    for (int p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = &b.v[static_cast<std::size_t>(p) * m];
      for (int j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
}

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols != b.rows)
    throw ShapeError("matmul: inner dims " + a.shape_str() + " vs " + b.shape_str());
  Tensor c(a.rows, b.cols);
  matmul_acc(a, b, c);
  return c;
}

// C += A * B^T
inline void matmul_nt_acc(const Tensor& a, const Tensor& b, Tensor& c) {
  const int n = a.rows, k = a.cols, m = b.rows;
  for (int i = 0; i < n; ++i) {
    const double* ai = &a.v[static_cast<std::size_t>(i) * k];
    double* ci = &c.v[static_cast<std::size_t>(i) * m];
    for (int j = 0; j < m; ++j) {
      const double* bj = &b.v[static_cast<std::size_t>(j) * k];
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
      ci[j] += s;
    }
  }
}

inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols != b.cols)
    throw ShapeError("matmul_nt: inner dims " + a.shape_str() + " vs " + b.shape_str());
  Tensor c(a.rows, b.rows);
  matmul_nt_acc(a, b, c);
  return c;
}

// C += A^T * B
inline void matmul_tn_acc(const Tensor& a, const Tensor& b, Tensor& c) {
  const int n = a.cols, k = a.rows, m = b.cols;
  for (int p = 0; p < k; ++p) {
    const double* ap = &a.v[static_cast<std::size_t>(p) * n];
    const double* bp = &b.v[static_cast<std::size_t>(p) * m];
    for (int i = 0; i < n; ++i) {
      const double av = ap[i];
      if (av == 0.0) continue;
      double* ci = &c.v[static_cast<std::size_t>(i) * m];
      for (int j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
}

inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  if (a.rows != b.rows)
    throw ShapeError("matmul_tn: inner dims " + a.shape_str() + " vs " + b.shape_str());
  Tensor c(a.cols, b.cols);
  matmul_tn_acc(a, b, c);
  return c;
}

inline void axpy(double alpha, const Tensor& x, Tensor& y) {
  for (std::size_t i = 0; i < x.size(); ++i) y.v[i] += alpha * x.v[i];
}

}  // namespace udalm

#endif
