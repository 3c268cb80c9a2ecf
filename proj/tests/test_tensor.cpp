#include <doctest.h>

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "canonae/rng.hpp"
#include "canonae/tensor.hpp"
#include "canonae/verify.hpp"

using namespace canonae;

namespace {

// broadcast oracle: explicit loops over the output grid, right-aligned dims
std::vector<double> bcast_add_oracle(const Tensor& a, const Tensor& b, int r, int c) {
  std::vector<double> out(static_cast<std::size_t>(r) * c);
  auto fetch = [](const Tensor& t, int i, int j) {
    if (t.rank() == 1) return t.at(j % t.shape()[0]);
    const int ti = t.shape()[0] == 1 ? 0 : i;
    const int tj = t.shape()[1] == 1 ? 0 : j;
    return t.at(ti, tj);
  };
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[static_cast<std::size_t>(i) * c + j] = fetch(a, i, j) + fetch(b, i, j);
  return out;
}

}  // namespace

TEST_CASE("elementwise examples") {
  const Tensor a = add(Tensor::vec({1, 2}), Tensor::vec({3, 4}));
  CHECK(a.at(0) == 4.0);
  CHECK(a.at(1) == 6.0);

  const Tensor m = mul(Tensor::vec({2, 3}), 0.0);
  CHECK(m.at(0) == 0.0);
  CHECK(m.at(1) == 0.0);
}

TEST_CASE("column-by-row broadcast matches the explicit-loop oracle") {
  const Tensor col = Tensor::matrix(2, 1, {1, 2});
  const Tensor row = Tensor::vec({10, 20});
  const Tensor r = add(col, row);
  REQUIRE(r.shape() == Shape{2, 2});
  const auto oracle = bcast_add_oracle(col, row, 2, 2);
  for (int i = 0; i < 4; ++i) CHECK(r.at(i) == oracle[static_cast<std::size_t>(i)]);
  CHECK(r.at(0, 0) == 11.0);
  CHECK(r.at(0, 1) == 21.0);
  CHECK(r.at(1, 0) == 12.0);
  CHECK(r.at(1, 1) == 22.0);

  // random shapes against the same oracle
  Rng rng(5);
  for (int it = 0; it < 30; ++it) {
    const int m = 1 + rng.below(4), n = 1 + rng.below(4);
    std::vector<double> av(static_cast<std::size_t>(m) * n), bv(static_cast<std::size_t>(n));
    for (double& v : av) v = rng.uniform(-3, 3);
    for (double& v : bv) v = rng.uniform(-3, 3);
    const Tensor x = Tensor::matrix(m, n, av);
    const Tensor y = Tensor::vec(bv);
    const Tensor s = add(x, y);
    const auto expect = bcast_add_oracle(x, y, m, n);
    for (int i = 0; i < s.size(); ++i) CHECK(s.at(i) == expect[static_cast<std::size_t>(i)]);
  }
}

TEST_CASE("shape errors name both shapes") {
  try {
    add(Tensor::matrix(2, 3, std::vector<double>(6, 0.0)), Tensor::vec({1, 2}));
    FAIL("expected shape error");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[2]") != std::string::npos);
  }
  CHECK_THROWS_AS(matmul(Tensor::matrix(2, 3, std::vector<double>(6, 0.0)),
                         Tensor::matrix(2, 2, std::vector<double>(4, 0.0))),
                  std::invalid_argument);
}

TEST_CASE("matmul examples and triple-loop oracle") {
  const Tensor id = Tensor::eye(2);
  const Tensor v = Tensor::matrix(2, 1, {5, 7});
  const Tensor r = matmul(id, v);
  CHECK(r.at(0) == 5.0);
  CHECK(r.at(1) == 7.0);

  const Tensor dot = matmul(Tensor::matrix(1, 2, {1, 2}), Tensor::matrix(2, 1, {3, 4}));
  CHECK(dot.item() == 11.0);

  Rng rng(7);
  std::vector<double> av(12), bv(8);
  for (double& x : av) x = rng.uniform(-2, 2);
  for (double& x : bv) x = rng.uniform(-2, 2);
  const Tensor a = Tensor::matrix(3, 4, av);
  const Tensor b = Tensor::matrix(4, 2, bv);
  const Tensor c = matmul(a, b);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 2; ++j) {
      double s = 0.0;
      for (int l = 0; l < 4; ++l) s += a.at(i, l) * b.at(l, j);
      CHECK(c.at(i, j) == doctest::Approx(s).epsilon(1e-14));
    }
  }
}

TEST_CASE("reductions with max tie routed to the lowest index") {
  const Tensor s0 = reduce(Reduce::Sum, Tensor::matrix(2, 2, {1, 2, 3, 4}), 0);
  CHECK(s0.at(0) == 4.0);
  CHECK(s0.at(1) == 6.0);

  CHECK(reduce(Reduce::Mean, Tensor::vec({2, 4}), 0).item() == 3.0);

  Tape tape;
  TapeScope scope(tape);
  const Tensor x = tape.watch(Tensor::vec({5, 5}));
  const Tensor m = reduce(Reduce::Max, x, 0);
  CHECK(m.item() == 5.0);
  const Gradients g = tape.backward(m);
  CHECK(g.grad(x).at(0) == 1.0);
  CHECK(g.grad(x).at(1) == 0.0);

  CHECK_THROWS_AS(reduce(Reduce::Sum, Tensor::vec({1, 2}), 1), std::invalid_argument);
}

TEST_CASE("max gradient near a tie agrees with finite differences on the perturbed input") {
  // nudge the tie so the max is differentiable, then compare to central FD
  ParamStore ps;
  ps.create("x", Tensor::vec({5.0, 5.0 - 1e-3}));
  const double err = fd_max_rel_error(ps, [](const Ctx& c) {
    return sum_all(mul(reduce(Reduce::Max, c.p("x"), 0), Tensor::scalar(2.0)));
  });
  CHECK(err < 1e-4);
}

TEST_CASE("nonlinear examples") {
  const Tensor sm = softmax_rows(Tensor::matrix(1, 2, {0, 0}));
  CHECK(sm.at(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(sm.at(0, 1) == doctest::Approx(0.5).epsilon(1e-15));

  const Tensor rl = relu(Tensor::vec({-1, 2}));
  CHECK(rl.at(0) == 0.0);
  CHECK(rl.at(1) == 2.0);

  // expected value from an independent scalar computation
  const double e0 = std::exp(0.0), e1 = std::exp(-1.0);
  const Tensor sm2 = softmax_rows(Tensor::matrix(1, 2, {0, -1}));
  CHECK(sm2.at(0, 0) == doctest::Approx(e0 / (e0 + e1)).epsilon(1e-10));
  CHECK(sm2.at(0, 1) == doctest::Approx(e1 / (e0 + e1)).epsilon(1e-10));
  CHECK(std::fabs(sm2.at(0, 0) - 0.7311) < 1e-4);
  CHECK(std::fabs(sm2.at(0, 1) - 0.2689) < 1e-4);

  // softmax rows sum to one within 1e-12
  Rng rng(9);
  std::vector<double> v(24);
  for (double& x : v) x = rng.uniform(-5, 5);
  const Tensor big = softmax_rows(Tensor::matrix(4, 6, v));
  for (int i = 0; i < 4; ++i) {
    double s = 0.0;
    for (int j = 0; j < 6; ++j) s += big.at(i, j);
    CHECK(std::fabs(s - 1.0) < 1e-12);
  }

  CHECK_THROWS_AS(norm_rows(Tensor::matrix(2, 2, {1, 1, 0, 0})), DegenerateInput);
  CHECK_THROWS_AS(log_t(Tensor::vec({1.0, -2.0})), std::domain_error);
  CHECK_THROWS_AS(sqrt_t(Tensor::vec({0.0})), std::domain_error);
}

TEST_CASE("backward basics") {
  {
    Tape tape;
    TapeScope scope(tape);
    const Tensor x = tape.watch(Tensor::scalar(3.0));
    const Tensor loss = mul(x, x);
    const Gradients g = tape.backward(loss);
    CHECK(g.grad(x).item() == doctest::Approx(6.0).epsilon(1e-14));
  }
  {
    Tape tape;
    TapeScope scope(tape);
    const Tensor x = tape.watch(Tensor::vec({-1, 1}));
    const Tensor loss = sum_all(relu(x));
    const Gradients g = tape.backward(loss);
    CHECK(g.grad(x).at(0) == 0.0);
    CHECK(g.grad(x).at(1) == 1.0);
  }
  {
    // non-scalar loss rejected
    Tape tape;
    TapeScope scope(tape);
    const Tensor x = tape.watch(Tensor::vec({1, 2}));
    CHECK_THROWS_AS(tape.backward(add(x, 1.0)), std::invalid_argument);
    // untracked loss rejected
    CHECK_THROWS_AS(tape.backward(Tensor::scalar(1.0)), std::invalid_argument);
  }
  {
    // untouched leaves get zero gradients
    Tape tape;
    TapeScope scope(tape);
    const Tensor used = tape.watch(Tensor::scalar(2.0));
    const Tensor unused = tape.watch(Tensor::vec({1, 2, 3}));
    const Gradients g = tape.backward(mul(used, used));
    CHECK(g.grad(unused).at(0) == 0.0);
    CHECK(g.grad(unused).at(2) == 0.0);
  }
}

TEST_CASE("composite of every op kind matches central finite differences") {
  Rng rng(17);
  for (int trial = 0; trial < 4; ++trial) {
    const int m = 2 + rng.below(3);
    const int n = 2 + rng.below(3);
    ParamStore ps;
    std::vector<double> av(static_cast<std::size_t>(m) * n), bv(static_cast<std::size_t>(n) * m), cv(3 * 2LL), dv(3 * 2LL);
    for (double& x : av) x = rng.uniform(0.2, 1.5);
    for (double& x : bv) x = rng.uniform(0.2, 1.5);
    for (double& x : cv) x = rng.uniform(-1.0, 1.0);
    for (double& x : dv) x = rng.uniform(-1.0, 1.0);
    ps.create("a", Tensor::matrix(m, n, av));
    ps.create("b", Tensor::matrix(n, m, bv));
    ps.create("c", Tensor::matrix(3, 2, cv));
    ps.create("d", Tensor::matrix(3, 2, dv));

    const double err = fd_max_rel_error(ps, [&](const Ctx& ctx) {
      const Tensor a = ctx.p("a");
      const Tensor b = ctx.p("b");
      const Tensor c = ctx.p("c");
      const Tensor d = ctx.p("d");
      Tensor t = matmul(a, b);                                   // [m,m]
      t = add(t, transpose(t));
      t = mul(sigmoid(t), tanh_t(t));
      t = sub(t, 0.3);
      t = div(t, add(abs_t(t), 1.5));
      Tensor row = reduce(Reduce::Mean, t, 0);                   // [m]
      Tensor mx = reduce(Reduce::Max, t, 1);                     // [m]
      Tensor sums = reduce(Reduce::Sum, exp_t(neg(abs_t(t))), 1);
      Tensor soft = softmax_rows(t);
      Tensor gathered = gather_rows(soft, {0, 0, 1});
      Tensor cat = concat_cols({gathered, gather_rows(soft, {1, 0, 0})});
      cat = concat_rows({cat, slice_rows(cat, 0, 2)});
      cat = slice_cols(cat, 0, cat.cols() - 1);
      Tensor cross = cross_cols(c, d);
      Tensor nr = norm_rows(add(abs_t(transpose(cross)), 0.5));  // [2]
      Tensor lg = log_t(add(abs_t(row), 1.0));
      Tensor sq = sqrt_t(add(mul(mx, mx), 1e-3));
      Tensor pieces = add(add(sum_all(cat), sum_all(nr)), add(sum_all(lg), sum_all(sq)));
      return add(pieces, add(sum_all(sums), mean_all(outer(row, mx))));
    });
    CHECK(err < 1e-4);
  }
}

TEST_CASE("forward determinism and tape replay") {
  Rng rng(23);
  std::vector<double> av(24), bv(24);
  for (double& x : av) x = rng.uniform(-2, 2);
  for (double& x : bv) x = rng.uniform(0.5, 2);
  const Tensor a = Tensor::matrix(4, 6, av);
  const Tensor b = Tensor::matrix(4, 6, bv);

  auto run = [&]() {
    return softmax_rows(div(mul(a, b), add(abs_t(a), 1.0)));
  };
  const Tensor r1 = run();
  const Tensor r2 = run();
  CHECK(std::memcmp(r1.data().data(), r2.data().data(), sizeof(double) * static_cast<std::size_t>(r1.size())) == 0);

  Tape tape;
  TapeScope scope(tape);
  const Tensor w = tape.watch(a);
  const Tensor loss = mean_all(mul(softmax_rows(w), b));
  const Gradients g1 = tape.backward(loss);
  const Gradients g2 = tape.backward(loss);
  const auto& v1 = g1.raw(a);
  const auto& v2 = g2.raw(a);
  CHECK(std::memcmp(v1.data(), v2.data(), v1.size() * sizeof(double)) == 0);
}

TEST_CASE("watch is idempotent per parameter") {
  Tape tape;
  TapeScope scope(tape);
  const Tensor p = Tensor::vec({1.0, 2.0});
  const Tensor w1 = tape.watch(p);
  const Tensor w2 = tape.watch(p);
  CHECK(w1.node() == w2.node());
  // both uses contribute to the same gradient slot
  const Gradients g = tape.backward(sum_all(add(w1, w2)));
  CHECK(g.grad(p).at(0) == 2.0);
  CHECK(g.grad(p).at(1) == 2.0);
}

TEST_CASE("tensors from another tape are rejected") {
  Tape t1;
  Tensor leaked;
  {
    TapeScope s1(t1);
    leaked = add(t1.watch(Tensor::scalar(1.0)), 1.0);
  }
  Tape t2;
  TapeScope s2(t2);
  const Tensor x = t2.watch(Tensor::scalar(2.0));
  CHECK_THROWS_AS(add(leaked, x), std::logic_error);
}
