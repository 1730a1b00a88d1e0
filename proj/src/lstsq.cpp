#include "icf/lstsq.hpp"

#include <cmath>

#include "icf/common.hpp"
#include "icf/kernels.hpp"

namespace icf {

namespace {

constexpr double kRidge = 1e-10;
constexpr double kDegenerateThreshold = 1e-10;

// In-place lower Cholesky of a symmetric positive-definite matrix. Returns the
// smallest pivot encountered (before taking the square root); a nonpositive
// pivot aborts with rows from that point left untouched.
double cholesky(Matrix& g) {
  const int n = g.rows;
  double min_pivot = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      double s = g(i, j);
      for (int k = 0; k < j; ++k) s -= g(i, k) * g(j, k);
      if (i == j) {
        if (s < min_pivot) min_pivot = s;
        if (s <= 0.0) return min_pivot;
        g(i, i) = std::sqrt(s);
      } else {
        g(i, j) = s / g(j, j);
      }
    }
    for (int j = i + 1; j < n; ++j) g(i, j) = 0.0;
  }
  return min_pivot;
}

void solve_cholesky(const Matrix& l, const double* b, double* x) {
  const int n = l.rows;
  std::vector<double> z(n);
  for (int i = 0; i < n; ++i) {
    double s = b[i];
    for (int k = 0; k < i; ++k) s -= l(i, k) * z[k];
    z[i] = s / l(i, i);
  }
  for (int i = n - 1; i >= 0; --i) {
    double s = z[i];
    for (int k = i + 1; k < n; ++k) s -= l(k, i) * x[k];
    x[i] = s / l(i, i);
  }
}

}  // namespace

LeastSquaresResult least_squares_solve(const Matrix& a, const Matrix& y) {
  if (y.cols != 1 || y.rows != a.cols)
    throw DimensionError("least_squares_solve: target must be " + std::to_string(a.cols) +
                         "x1, got " + y.shape_str());
  if (a.cols > a.rows)
    throw DimensionError("least_squares_solve: requires d <= M, got A " + a.shape_str());
  if (!a.all_finite() || !y.all_finite())
    throw Error("least_squares_solve: nonfinite input");

  const int d = a.cols;

  // Gram matrix G = A^T A, fixed row-order accumulation.
  Matrix gram(d, d);
  for (int r = 0; r < a.rows; ++r) {
    const double* row = a.row_ptr(r);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) gram(i, j) += row[i] * row[j];
  }

  double max_diag = 0.0;
  for (int i = 0; i < d; ++i) max_diag = std::max(max_diag, gram(i, i));

  Matrix probe = gram;
  const double min_pivot = cholesky(probe);
  const bool degenerate =
      max_diag <= 0.0 || min_pivot < kDegenerateThreshold * max_diag;

  Matrix ridged = gram;
  const double ridge = kRidge * std::max(1.0, max_diag);
  for (int i = 0; i < d; ++i) ridged(i, i) += ridge;
  if (cholesky(ridged) <= 0.0)
    throw Error("least_squares_solve: Gram matrix not factorizable even with ridge");

  std::vector<double> z(d);
  solve_cholesky(ridged, y.data.data(), z.data());

  LeastSquaresResult res;
  res.degenerate = degenerate;
  res.c = Matrix(a.rows, 1);
  for (int r = 0; r < a.rows; ++r) res.c.data[r] = kernels::dot(a.row_ptr(r), z.data(), d);

  double rss = 0.0;
  for (int j = 0; j < d; ++j) {
    double s = 0.0;
    for (int r = 0; r < a.rows; ++r) s += a(r, j) * res.c.data[r];
    const double diff = s - y.data[j];
    rss += diff * diff;
  }
  res.residual = std::sqrt(rss);
  return res;
}

}  // namespace icf
