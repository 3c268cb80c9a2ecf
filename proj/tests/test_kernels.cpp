#include <doctest.h>

#include <array>
#include <cstring>
#include <vector>

#include "canonae/kernels.hpp"
#include "canonae/rng.hpp"

using namespace canonae;

namespace {

std::vector<double> random_buf(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-2.0, 2.0);
  return v;
}

// naive oracle, written independently of the kernels
std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b, int m, int k, int n) {
  std::vector<double> c(static_cast<std::size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      for (int l = 0; l < k; ++l)
        c[static_cast<std::size_t>(i) * n + j] += a[static_cast<std::size_t>(i) * k + l] * b[static_cast<std::size_t>(l) * n + j];
  return c;
}

}  // namespace

TEST_CASE("parallel matmul kernels match the serial reference bitwise") {
  Rng rng(11);
  const std::vector<std::array<int, 3>> sizes = {{3, 4, 2}, {17, 33, 9}, {64, 128, 96}, {120, 200, 80}};
  for (const auto& [m, k, n] : sizes) {
    const auto a = random_buf(static_cast<std::size_t>(m) * k, rng);
    const auto b = random_buf(static_cast<std::size_t>(k) * n, rng);
    std::vector<double> cs(static_cast<std::size_t>(m) * n), cp(cs.size());
    kernels::matmul_serial(a.data(), b.data(), cs.data(), m, k, n);
    kernels::matmul_parallel(a.data(), b.data(), cp.data(), m, k, n);
    CHECK(std::memcmp(cs.data(), cp.data(), cs.size() * sizeof(double)) == 0);

    // and both agree with the naive triple loop to rounding
    const auto oracle = naive_matmul(a, b, m, k, n);
    for (std::size_t i = 0; i < oracle.size(); ++i) CHECK(cs[i] == doctest::Approx(oracle[i]).epsilon(1e-12));
  }
}

TEST_CASE("transposed kernels match explicit transposition") {
  Rng rng(12);
  const int m = 13, k = 7, n = 11;
  const auto a = random_buf(static_cast<std::size_t>(m) * k, rng);   // [m,k]
  const auto bt = random_buf(static_cast<std::size_t>(n) * k, rng);  // [n,k]
  // oracle: transpose bt then multiply
  std::vector<double> b(static_cast<std::size_t>(k) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j) b[static_cast<std::size_t>(j) * n + i] = bt[static_cast<std::size_t>(i) * k + j];
  const auto oracle = naive_matmul(a, b, m, k, n);

  std::vector<double> c(static_cast<std::size_t>(m) * n), cp(c.size());
  kernels::matmul_nt_serial(a.data(), bt.data(), c.data(), m, k, n);
  kernels::matmul_nt_parallel(a.data(), bt.data(), cp.data(), m, k, n);
  CHECK(std::memcmp(c.data(), cp.data(), c.size() * sizeof(double)) == 0);
  for (std::size_t i = 0; i < oracle.size(); ++i) CHECK(c[i] == doctest::Approx(oracle[i]).epsilon(1e-12));

  // tn: A is [k,m]
  const auto at = random_buf(static_cast<std::size_t>(k) * m, rng);
  std::vector<double> a2(static_cast<std::size_t>(m) * k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < m; ++j) a2[static_cast<std::size_t>(j) * k + i] = at[static_cast<std::size_t>(i) * m + j];
  const auto b2 = random_buf(static_cast<std::size_t>(k) * n, rng);
  const auto oracle2 = naive_matmul(a2, b2, m, k, n);
  std::vector<double> c2(static_cast<std::size_t>(m) * n), c2p(c2.size());
  kernels::matmul_tn_serial(at.data(), b2.data(), c2.data(), m, k, n);
  kernels::matmul_tn_parallel(at.data(), b2.data(), c2p.data(), m, k, n);
  CHECK(std::memcmp(c2.data(), c2p.data(), c2.size() * sizeof(double)) == 0);
  for (std::size_t i = 0; i < oracle2.size(); ++i) CHECK(c2[i] == doctest::Approx(oracle2[i]).epsilon(1e-12));
}

TEST_CASE("elementwise and axpy parallel variants are bitwise equal to serial") {
  Rng rng(13);
  const std::size_t n = 40000;  // above the parallel threshold
  const auto a = random_buf(n, rng);
  const auto b = random_buf(n, rng);
  for (auto op : {kernels::Ew::Add, kernels::Ew::Sub, kernels::Ew::Mul, kernels::Ew::Div}) {
    std::vector<double> s(n), p(n);
    kernels::ew_serial(op, a.data(), b.data(), s.data(), n);
    kernels::ew_parallel(op, a.data(), b.data(), p.data(), n);
    CHECK(std::memcmp(s.data(), p.data(), n * sizeof(double)) == 0);
  }
  std::vector<double> ys = b, yp = b;
  kernels::axpy_serial(0.37, a.data(), ys.data(), n);
  kernels::axpy_parallel(0.37, a.data(), yp.data(), n);
  CHECK(std::memcmp(ys.data(), yp.data(), n * sizeof(double)) == 0);
}
