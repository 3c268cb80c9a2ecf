#pragma once

#include <cstddef>

namespace canonae::kernels {

// Dense double-precision kernels. Each has a serial reference implementation
// and an OpenMP variant that partitions output elements across threads; the
// inner summation order is identical, so serial and parallel results are
// bitwise equal. The unsuffixed entry points dispatch on problem size.

// C[m x n] = A[m x k] * B[k x n]
void matmul_serial(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_parallel(const double* a, const double* b, double* c, int m, int k, int n);
void matmul(const double* a, const double* b, double* c, int m, int k, int n);

// C[m x n] = A[m x k] * B[n x k]^T
void matmul_nt_serial(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_nt_parallel(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n);

// C[m x n] = A[k x m]^T * B[k x n]
void matmul_tn_serial(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_tn_parallel(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n);

enum class Ew { Add, Sub, Mul, Div };

// out[i] = a[i] (op) b[i]
void ew_serial(Ew op, const double* a, const double* b, double* out, std::size_t n);
void ew_parallel(Ew op, const double* a, const double* b, double* out, std::size_t n);
void ew(Ew op, const double* a, const double* b, double* out, std::size_t n);

// y[i] += alpha * x[i]
void axpy_serial(double alpha, const double* x, double* y, std::size_t n);
void axpy_parallel(double alpha, const double* x, double* y, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);

}  // namespace canonae::kernels
