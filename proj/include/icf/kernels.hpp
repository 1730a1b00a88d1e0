#ifndef ICF_KERNELS_HPP
#define ICF_KERNELS_HPP

#include "icf/matrix.hpp"

// Dense compute kernels. Each OpenMP kernel has a serial reference twin
// (`*_serial`) kept for testing; the parallel versions preserve the serial
// per-element summation order (fixed k-loop), so results are bit-identical
// to the reference regardless of thread count.
namespace icf::kernels {

// Number of OpenMP threads the kernels will use (1 when built without OpenMP).
int max_threads();

// Clamp the OpenMP thread count; n <= 0 leaves the runtime default untouched.
void set_threads(int n);

// c = a * b
void matmul_serial(const Matrix& a, const Matrix& b, Matrix& c);
void matmul(const Matrix& a, const Matrix& b, Matrix& c);

// y = a * x for a column vector x (cols == 1 enforced by the matmul contract)
void matvec_serial(const Matrix& a, const double* x, double* y);
void matvec(const Matrix& a, const double* x, double* y);

// y = a^T * x
void matvec_transposed_serial(const Matrix& a, const double* x, double* y);
void matvec_transposed(const Matrix& a, const double* x, double* y);

// out += alpha * x elementwise
void axpy(double alpha, const Matrix& x, Matrix& out);

double dot(const double* a, const double* b, int n);

}  // namespace icf::kernels

namespace icf {

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_serial(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

}  // namespace icf

#endif
