#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <vector>

#include "canonae/groups.hpp"
#include "canonae/rng.hpp"
#include "canonae/verify.hpp"

using namespace canonae;

namespace {

double max_diff(const Tensor& a, const Tensor& b) {
  double d = 0.0;
  for (int i = 0; i < a.size(); ++i) d = std::max(d, std::fabs(a.at(i) - b.at(i)));
  return d;
}

bool sorted_ascending(const Tensor& col) {
  for (int i = 1; i < col.rows(); ++i)
    if (col.at(i, 0) < col.at(i - 1, 0)) return false;
  return true;
}

}  // namespace

TEST_CASE("apply: identity, quarter turn, permutation against matrix oracle") {
  const Tensor x = Tensor::matrix(3, 2, {1, 0, 0.5, -2, 3, 1});
  CHECK(max_diff(apply(identity_like(GroupElement::rot2_angle(0.3)), x), x) == 0.0);

  const Tensor one = Tensor::matrix(1, 2, {1, 0});
  const Tensor quarter = apply(GroupElement::rot2_angle(std::numbers::pi / 2), one);
  CHECK(quarter.at(0, 0) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(quarter.at(0, 1) == doctest::Approx(1.0).epsilon(1e-15));

  // rows [a,b,c] gathered by sigma = [2,0,1] -> [c,a,b]
  const Tensor abc = Tensor::matrix(3, 1, {10, 20, 30});
  const Tensor got = apply(GroupElement::perm({2, 0, 1}), abc);
  CHECK(got.at(0, 0) == 30.0);
  CHECK(got.at(1, 0) == 10.0);
  CHECK(got.at(2, 0) == 20.0);

  // oracle: multiply by the explicit matrix with M[i][sigma(i)] = 1
  std::vector<double> m(9, 0.0);
  const std::vector<int> sigma = {2, 0, 1};
  for (int i = 0; i < 3; ++i) m[static_cast<std::size_t>(i) * 3 + sigma[static_cast<std::size_t>(i)]] = 1.0;
  const Tensor oracle = matmul(Tensor::matrix(3, 3, std::move(m)), abc);
  CHECK(max_diff(got, oracle) == 0.0);

  CHECK_THROWS_AS(apply(GroupElement::perm({1, 0}), abc), std::invalid_argument);
  CHECK_THROWS_AS(apply(GroupElement::rot3({1, 0, 0, 0, 1, 0, 0, 0, 1}), x), std::invalid_argument);
}

TEST_CASE("xi_so2 examples") {
  CHECK(element_distance(xi_so2({1, 0}), GroupElement::rot2({1, 0, 0, 1})) == 0.0);

  const GroupElement q = xi_so2({0, 1});
  CHECK(element_distance(q, GroupElement::rot2({0, -1, 1, 0})) < 1e-15);
  CHECK(q.angle() == doctest::Approx(std::numbers::pi / 2));

  // normalization oracle: (3,4) and (0.6,0.8) give the same matrix
  CHECK(element_distance(xi_so2({3, 4}), xi_so2({0.6, 0.8})) < 1e-15);

  CHECK_THROWS_AS(xi_so2({1e-12, -1e-12}), DegenerateFrame);
}

TEST_CASE("xi_so3 frame construction") {
  const Mat3 id{1, 0, 0, 0, 1, 0, 0, 0, 1};
  CHECK(element_distance(xi_so3({1, 0, 0}, {0, 1, 0}), GroupElement::rot3(id)) == 0.0);

  // swapped frame: columns e2, e1, and e2 x e1 = -e3; still a proper rotation
  const GroupElement sw = xi_so3({0, 1, 0}, {1, 0, 0});
  const auto& m = sw.as<Rot3>().m;
  CHECK(m[1] == 1.0);  // column 1 is e1
  CHECK(m[3] == 1.0);  // column 0 is e2
  CHECK(m[8] == -1.0);
  double ortho = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += m[static_cast<std::size_t>(3 * k + i)] * m[static_cast<std::size_t>(3 * k + j)];
      ortho = std::max(ortho, std::fabs(s - (i == j ? 1 : 0)));
    }
  CHECK(ortho < 1e-15);
  const double det = m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
                     m[2] * (m[3] * m[7] - m[4] * m[6]);
  CHECK(det == doctest::Approx(1.0).epsilon(1e-12));

  // Gram-Schmidt removes the e1 component of (1,1,0)
  CHECK(element_distance(xi_so3({1, 0, 0}, {1, 1, 0}), GroupElement::rot3(id)) < 1e-15);

  CHECK_THROWS_AS(xi_so3({1, 0, 0}, {2, 0, 0}), DegenerateFrame);
  CHECK_THROWS_AS(xi_so3({0, 0, 0}, {1, 0, 0}), DegenerateFrame);
}

TEST_CASE("xi_perm via brute force over all 3! permutations") {
  // already sorted -> identity
  CHECK(element_distance(xi_perm({1, 2, 3}), GroupElement::perm({0, 1, 2})) == 0.0);

  // brute-force oracle from the contract: sigma is the permutation whose
  // inverse gathers w into ascending order, ties broken by input order
  const std::vector<double> w = {3, 1, 2};
  std::vector<int> base = {0, 1, 2};
  std::vector<std::vector<int>> sorting;
  do {
    const GroupElement cand = GroupElement::perm(base);
    const Tensor col = Tensor::matrix(3, 1, std::vector<double>(w));
    if (sorted_ascending(apply(inverse(cand), col))) sorting.push_back(base);
  } while (std::next_permutation(base.begin(), base.end()));
  REQUIRE(sorting.size() == 1);  // distinct values: unique sorting permutation
  CHECK(xi_perm(w).as<Perm>().sigma == sorting[0]);
  CHECK(sorting[0] == std::vector<int>{2, 0, 1});

  // tie keeps input order
  CHECK(element_distance(xi_perm({5, 5}), GroupElement::perm({0, 1})) == 0.0);
}

TEST_CASE("xi_translation examples") {
  CHECK(element_distance(xi_translation({0, 0, 0}),
                         identity_like(GroupElement::transl({0, 0, 0}))) == 0.0);
  const GroupElement t = xi_translation({1, 2, 3});
  CHECK(t.as<Transl>().v == std::vector<double>{1, 2, 3});
  // additivity
  const GroupElement ab = xi_translation({1.5, -2, 0.25});
  const GroupElement a = xi_translation({1, -1, 0});
  const GroupElement b = xi_translation({0.5, -1, 0.25});
  CHECK(element_distance(ab, compose(a, b)) < 1e-15);
}

TEST_CASE("xi_se3: rotation from differences, translation from the anchor vector") {
  const GroupElement e = xi_se3({1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {0, 0, 0});
  CHECK(element_distance(e, GroupElement::se3({1, 0, 0, 0, 1, 0, 0, 0, 1}, {0, 0, 0})) == 0.0);

  // shifting every mu by t leaves the rotation unchanged and adds t
  Rng rng(31);
  for (int it = 0; it < 50; ++it) {
    Vec3 mu[4];
    for (auto& v : mu) v = {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
    const Vec3 t{1, 1, 1};
    GroupElement g1, g2;
    try {
      g1 = xi_se3(mu[0], mu[1], mu[2], mu[3]);
      g2 = xi_se3({mu[0][0] + t[0], mu[0][1] + t[1], mu[0][2] + t[2]},
                  {mu[1][0] + t[0], mu[1][1] + t[1], mu[1][2] + t[2]},
                  {mu[2][0] + t[0], mu[2][1] + t[1], mu[2][2] + t[2]},
                  {mu[3][0] + t[0], mu[3][1] + t[1], mu[3][2] + t[2]});
    } catch (const DegenerateFrame&) {
      continue;
    }
    CHECK(element_distance(GroupElement::rot3(g1.as<SE3>().rot), GroupElement::rot3(g2.as<SE3>().rot)) < 1e-12);
    for (int c = 0; c < 3; ++c)
      CHECK(g2.as<SE3>().t[static_cast<std::size_t>(c)] ==
            doctest::Approx(g1.as<SE3>().t[static_cast<std::size_t>(c)] + 1.0).epsilon(1e-12));

    // direct-evaluation oracle: applying the element to the canonical frame
    // rows reproduces the orthonormalized directions shifted by t
    const auto& se = g1.as<SE3>();
    const Tensor frame = Tensor::matrix(2, 3, {1, 0, 0, 0, 1, 0});
    const Tensor moved = apply(g1, frame);
    // expected: Gram-Schmidt of (mu1-mu4, mu2-mu4) computed right here
    Vec3 d1{mu[0][0] - mu[3][0], mu[0][1] - mu[3][1], mu[0][2] - mu[3][2]};
    Vec3 d2{mu[1][0] - mu[3][0], mu[1][1] - mu[3][1], mu[1][2] - mu[3][2]};
    const double n1 = std::sqrt(d1[0] * d1[0] + d1[1] * d1[1] + d1[2] * d1[2]);
    for (auto& v : d1) v /= n1;
    const double proj = d2[0] * d1[0] + d2[1] * d1[1] + d2[2] * d1[2];
    for (int c = 0; c < 3; ++c) d2[static_cast<std::size_t>(c)] -= proj * d1[static_cast<std::size_t>(c)];
    const double n2 = std::sqrt(d2[0] * d2[0] + d2[1] * d2[1] + d2[2] * d2[2]);
    for (auto& v : d2) v /= n2;
    for (int c = 0; c < 3; ++c) {
      CHECK(moved.at(0, c) == doctest::Approx(d1[static_cast<std::size_t>(c)] + se.t[static_cast<std::size_t>(c)]).epsilon(1e-12));
      CHECK(moved.at(1, c) == doctest::Approx(d2[static_cast<std::size_t>(c)] + se.t[static_cast<std::size_t>(c)]).epsilon(1e-12));
    }
  }
}

TEST_CASE("random elements are deterministic per seed") {
  for (GroupTag tag : {GroupTag::SO2, GroupTag::SO3, GroupTag::T, GroupTag::Perm, GroupTag::SE3}) {
    Rng a(99), b(99);
    const GroupElement g1 = random_element(tag, 4, a);
    const GroupElement g2 = random_element(tag, 4, b);
    CHECK(element_distance(g1, g2) == 0.0);
  }
}

TEST_CASE("equivariance checker accepts lawful psi and rejects a constant one") {
  Rng rng(41);
  // asymmetric cloud, psi reads the first row through xi_so2: equivariant
  const Tensor cloud = Tensor::matrix(4, 2, {1.2, 0.3, -0.5, 0.8, 0.1, -1.1, 0.7, 0.9});
  auto psi = [](const Tensor& x) { return xi_so2({x.at(0, 0), x.at(0, 1)}); };
  for (int it = 0; it < 100; ++it) {
    const GroupElement g = random_element(GroupTag::SO2, 2, rng);
    CHECK(check_equivariance_up_to_stabilizer(psi, cloud, g, 1e-6));
  }
  // constant psi must fail for g far from the stabilizer (trivial here)
  auto psi_const = [](const Tensor&) { return GroupElement::rot2_angle(0.0); };
  CHECK_FALSE(check_equivariance_up_to_stabilizer(psi_const, cloud, GroupElement::rot2_angle(1.0), 1e-6));
}

TEST_CASE("group element JSON round trip") {
  Rng rng(43);
  const GroupElement p = random_element(GroupTag::Perm, 7, rng);
  CHECK(element_distance(GroupElement::from_json(p.to_json()), p) == 0.0);

  const GroupElement r = random_element(GroupTag::SO3, 3, rng);
  CHECK(element_distance(GroupElement::from_json(r.to_json()), r) < 1e-15);

  const GroupElement s = random_element(GroupTag::SE3, 3, rng);
  CHECK(element_distance(GroupElement::from_json(s.to_json()), s) < 1e-15);

  CHECK_THROWS(GroupElement::from_json("{\"kind\":\"spinor\"}"));
  CHECK_THROWS_AS(GroupElement::perm({0, 0, 1}), std::invalid_argument);
}

TEST_CASE("groups property suite passes") {
  const SuiteReport rep = verify_groups(1);
  for (const auto& c : rep.checks) {
    INFO(c.name, " measured ", c.measured, " tolerance ", c.tolerance);
    CHECK(c.pass);
  }
}
