#ifndef ICF_LSTSQ_HPP
#define ICF_LSTSQ_HPP

#include "icf/matrix.hpp"

namespace icf {

struct LeastSquaresResult {
  Matrix c;         // M x 1
  double residual;  // ||A^T c - y||_2
  bool degenerate;  // rank-deficiency detected in A
};

// Minimum-norm solution of c^T A = y^T for an M x d matrix A (d <= M) and a
// d x 1 target y, via ridge-stabilized normal equations: c = A (A^T A + rI)^-1 y.
// Degeneracy proxy: smallest Cholesky pivot of the unridged Gram relative to
// its largest diagonal entry; flagged when below 1e-10.
LeastSquaresResult least_squares_solve(const Matrix& a, const Matrix& y);

}  // namespace icf

#endif
