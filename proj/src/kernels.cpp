#include "icf/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace icf::kernels {

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_threads(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

static void check_matmul_shapes(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows)
    throw DimensionError("matmul: inner dimensions differ, " + a.shape_str() + " times " +
                         b.shape_str());
}

void matmul_serial(const Matrix& a, const Matrix& b, Matrix& c) {
  check_matmul_shapes(a, b);
  c = Matrix(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = a.row_ptr(i);
    double* crow = c.row_ptr(i);
    for (int k = 0; k < a.cols; ++k) {
      const double aik = arow[k];
      const double* brow = b.row_ptr(k);
      for (int j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
    }
  }
}

void matmul(const Matrix& a, const Matrix& b, Matrix& c) {
  check_matmul_shapes(a, b);
  c = Matrix(a.rows, b.cols);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = a.row_ptr(i);
    double* crow = c.row_ptr(i);
    for (int k = 0; k < a.cols; ++k) {
      const double aik = arow[k];
      const double* brow = b.row_ptr(k);
      for (int j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
    }
  }
}

void matvec_serial(const Matrix& a, const double* x, double* y) {
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = a.row_ptr(i);
    double s = 0.0;
    for (int j = 0; j < a.cols; ++j) s += arow[j] * x[j];
    y[i] = s;
  }
}

void matvec(const Matrix& a, const double* x, double* y) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = a.row_ptr(i);
    double s = 0.0;
    for (int j = 0; j < a.cols; ++j) s += arow[j] * x[j];
    y[i] = s;
  }
}

void matvec_transposed_serial(const Matrix& a, const double* x, double* y) {
  for (int j = 0; j < a.cols; ++j) y[j] = 0.0;
  for (int i = 0; i < a.rows; ++i) {
    const double* arow = a.row_ptr(i);
    const double xi = x[i];
    for (int j = 0; j < a.cols; ++j) y[j] += arow[j] * xi;
  }
}

void matvec_transposed(const Matrix& a, const double* x, double* y) {
  // Each output coordinate sums over rows in fixed ascending order.
#pragma omp parallel for schedule(static)
  for (int j = 0; j < a.cols; ++j) {
    double s = 0.0;
    for (int i = 0; i < a.rows; ++i) s += a(i, j) * x[i];
    y[j] = s;
  }
}

void axpy(double alpha, const Matrix& x, Matrix& out) {
  check_same_shape(x, out, "axpy");
  for (size_t i = 0; i < x.size(); ++i) out.data[i] += alpha * x.data[i];
}

double dot(const double* a, const double* b, int n) {
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

}  // namespace icf::kernels

namespace icf {

Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix c;
  kernels::matmul(a, b, c);
  return c;
}

Matrix matmul_serial(const Matrix& a, const Matrix& b) {
  Matrix c;
  kernels::matmul_serial(a, b, c);
  return c;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols, a.rows);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
  return t;
}

}  // namespace icf
