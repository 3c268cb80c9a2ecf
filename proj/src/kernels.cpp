#include "canonae/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace canonae::kernels {

namespace {

// Below this many multiply-adds the omp region costs more than it saves.
constexpr long long kMinParallelFlops = 1LL << 16;
constexpr std::size_t kMinParallelElems = 1u << 14;

inline bool want_parallel(long long work) {
#ifdef _OPENMP
  return work >= kMinParallelFlops && omp_get_level() == 0;
#else
  (void)work;
  return false;
#endif
}

}  // namespace

void matmul_serial(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    double* ci = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) ci[j] = 0.0;
    const double* ai = a + static_cast<std::size_t>(i) * k;
    for (int l = 0; l < k; ++l) {
      const double ail = ai[l];
      const double* bl = b + static_cast<std::size_t>(l) * n;
      for (int j = 0; j < n; ++j) ci[j] += ail * bl[j];
    }
  }
}

void matmul_parallel(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    double* ci = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) ci[j] = 0.0;
    const double* ai = a + static_cast<std::size_t>(i) * k;
    for (int l = 0; l < k; ++l) {
      const double ail = ai[l];
      const double* bl = b + static_cast<std::size_t>(l) * n;
      for (int j = 0; j < n; ++j) ci[j] += ail * bl[j];
    }
  }
}

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
  if (want_parallel(static_cast<long long>(m) * k * n))
    matmul_parallel(a, b, c, m, k, n);
  else
    matmul_serial(a, b, c, m, k, n);
}

void matmul_nt_serial(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<std::size_t>(i) * k;
    double* ci = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* bj = b + static_cast<std::size_t>(j) * k;
      double s = 0.0;
      for (int l = 0; l < k; ++l) s += ai[l] * bj[l];
      ci[j] = s;
    }
  }
}

void matmul_nt_parallel(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<std::size_t>(i) * k;
    double* ci = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* bj = b + static_cast<std::size_t>(j) * k;
      double s = 0.0;
      for (int l = 0; l < k; ++l) s += ai[l] * bj[l];
      ci[j] = s;
    }
  }
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n) {
  if (want_parallel(static_cast<long long>(m) * k * n))
    matmul_nt_parallel(a, b, c, m, k, n);
  else
    matmul_nt_serial(a, b, c, m, k, n);
}

void matmul_tn_serial(const double* a, const double* b, double* c, int m, int k, int n) {
  for (std::size_t i = 0; i < static_cast<std::size_t>(m) * n; ++i) c[i] = 0.0;
  for (int l = 0; l < k; ++l) {
    const double* al = a + static_cast<std::size_t>(l) * m;
    const double* bl = b + static_cast<std::size_t>(l) * n;
    for (int i = 0; i < m; ++i) {
      const double ali = al[i];
      double* ci = c + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) ci[j] += ali * bl[j];
    }
  }
}

void matmul_tn_parallel(const double* a, const double* b, double* c, int m, int k, int n) {
  // Partition over output rows i; the l-loop order per element matches the
  // serial kernel exactly.
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    double* ci = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) ci[j] = 0.0;
    for (int l = 0; l < k; ++l) {
      const double ali = a[static_cast<std::size_t>(l) * m + i];
      const double* bl = b + static_cast<std::size_t>(l) * n;
      for (int j = 0; j < n; ++j) ci[j] += ali * bl[j];
    }
  }
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n) {
  if (want_parallel(static_cast<long long>(m) * k * n))
    matmul_tn_parallel(a, b, c, m, k, n);
  else
    matmul_tn_serial(a, b, c, m, k, n);
}

namespace {

template <Ew Op>
inline double apply_ew(double x, double y) {
  if constexpr (Op == Ew::Add) return x + y;
  if constexpr (Op == Ew::Sub) return x - y;
  if constexpr (Op == Ew::Mul) return x * y;
  return x / y;
}

template <Ew Op>
void ew_loop_serial(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = apply_ew<Op>(a[i], b[i]);
}

template <Ew Op>
void ew_loop_parallel(const double* a, const double* b, double* out, std::size_t n) {
  const long long nn = static_cast<long long>(n);
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < nn; ++i) out[i] = apply_ew<Op>(a[i], b[i]);
}

}  // namespace

void ew_serial(Ew op, const double* a, const double* b, double* out, std::size_t n) {
  switch (op) {
    case Ew::Add: ew_loop_serial<Ew::Add>(a, b, out, n); break;
    case Ew::Sub: ew_loop_serial<Ew::Sub>(a, b, out, n); break;
    case Ew::Mul: ew_loop_serial<Ew::Mul>(a, b, out, n); break;
    case Ew::Div: ew_loop_serial<Ew::Div>(a, b, out, n); break;
  }
}

void ew_parallel(Ew op, const double* a, const double* b, double* out, std::size_t n) {
  switch (op) {
    case Ew::Add: ew_loop_parallel<Ew::Add>(a, b, out, n); break;
    case Ew::Sub: ew_loop_parallel<Ew::Sub>(a, b, out, n); break;
    case Ew::Mul: ew_loop_parallel<Ew::Mul>(a, b, out, n); break;
    case Ew::Div: ew_loop_parallel<Ew::Div>(a, b, out, n); break;
  }
}

void ew(Ew op, const double* a, const double* b, double* out, std::size_t n) {
#ifdef _OPENMP
  if (n >= kMinParallelElems && omp_get_level() == 0) {
    ew_parallel(op, a, b, out, n);
    return;
  }
#endif
  ew_serial(op, a, b, out, n);
}

void axpy_serial(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void axpy_parallel(double alpha, const double* x, double* y, std::size_t n) {
  const long long nn = static_cast<long long>(n);
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < nn; ++i) y[i] += alpha * x[i];
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
#ifdef _OPENMP
  if (n >= kMinParallelElems && omp_get_level() == 0) {
    axpy_parallel(alpha, x, y, n);
    return;
  }
#endif
  axpy_serial(alpha, x, y, n);
}

}  // namespace canonae::kernels
