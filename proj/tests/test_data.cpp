#include <doctest.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "canonae/data.hpp"
#include "canonae/groups.hpp"

using namespace canonae;

namespace {

// --- Kabsch oracle (independent alignment check) ---------------------------
// Optimal proper rotation aligning centered a onto centered b, via a Jacobi
// eigen-decomposition of H^T H.

using M3 = std::array<double, 9>;

void jacobi_eigen(M3 a, M3& vecs, std::array<double, 3>& vals) {
  vecs = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  for (int sweep = 0; sweep < 60; ++sweep) {
    int p = 0, q = 1;
    double off = std::fabs(a[1]);
    if (std::fabs(a[2]) > off) { off = std::fabs(a[2]); p = 0; q = 2; }
    if (std::fabs(a[5]) > off) { off = std::fabs(a[5]); p = 1; q = 2; }
    if (off < 1e-15) break;
    const double app = a[static_cast<std::size_t>(p) * 3 + p];
    const double aqq = a[static_cast<std::size_t>(q) * 3 + q];
    const double apq = a[static_cast<std::size_t>(p) * 3 + q];
    const double theta = 0.5 * std::atan2(2 * apq, aqq - app);
    const double c = std::cos(theta), s = std::sin(theta);
    M3 r = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    r[static_cast<std::size_t>(p) * 3 + p] = c;
    r[static_cast<std::size_t>(q) * 3 + q] = c;
    r[static_cast<std::size_t>(p) * 3 + q] = s;
    r[static_cast<std::size_t>(q) * 3 + p] = -s;
    auto mm = [](const M3& x, const M3& y) {
      M3 z{};
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
          for (int k = 0; k < 3; ++k) z[static_cast<std::size_t>(i) * 3 + j] += x[static_cast<std::size_t>(i) * 3 + k] * y[static_cast<std::size_t>(k) * 3 + j];
      return z;
    };
    M3 rt{};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) rt[static_cast<std::size_t>(i) * 3 + j] = r[static_cast<std::size_t>(j) * 3 + i];
    a = mm(mm(rt, a), r);
    vecs = mm(vecs, r);
  }
  vals = {a[0], a[4], a[8]};
}

double kabsch_min_rmsd(const Tensor& pa, const Tensor& pb) {
  const int n = pa.rows();
  std::array<double, 3> ca{}, cb{};
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) {
      ca[static_cast<std::size_t>(c)] += pa.at(i, c) / n;
      cb[static_cast<std::size_t>(c)] += pb.at(i, c) / n;
    }
  // H = sum (a - ca)(b - cb)^T
  M3 h{};
  for (int i = 0; i < n; ++i)
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c)
        h[static_cast<std::size_t>(r) * 3 + c] += (pa.at(i, r) - ca[static_cast<std::size_t>(r)]) * (pb.at(i, c) - cb[static_cast<std::size_t>(c)]);

  // SVD via eigenvectors of H^T H: H = U S V^T with V from H^T H
  M3 hth{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) hth[static_cast<std::size_t>(i) * 3 + j] += h[static_cast<std::size_t>(k) * 3 + i] * h[static_cast<std::size_t>(k) * 3 + j];
  M3 v{};
  std::array<double, 3> lam{};
  jacobi_eigen(hth, v, lam);
  // U columns = H v / sqrt(lambda); guard tiny singular values
  M3 u{};
  for (int c = 0; c < 3; ++c) {
    const double s = std::sqrt(std::max(lam[static_cast<std::size_t>(c)], 1e-18));
    for (int r = 0; r < 3; ++r) {
      double acc = 0.0;
      for (int k = 0; k < 3; ++k) acc += h[static_cast<std::size_t>(r) * 3 + k] * v[static_cast<std::size_t>(k) * 3 + c];
      u[static_cast<std::size_t>(r) * 3 + c] = acc / s;
    }
  }
  auto det3 = [](const M3& m) {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
  };
  // proper rotation R = V D U^T maximizing tr(R H), D = diag(1,1,det(VU^T))
  M3 vut{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) vut[static_cast<std::size_t>(i) * 3 + j] += v[static_cast<std::size_t>(i) * 3 + k] * u[static_cast<std::size_t>(j) * 3 + k];
  const double d = det3(vut) < 0 ? -1.0 : 1.0;
  M3 rot{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 3; ++k) {
        const double dk = k == 2 ? d : 1.0;
        acc += v[static_cast<std::size_t>(i) * 3 + k] * dk * u[static_cast<std::size_t>(j) * 3 + k];
      }
      rot[static_cast<std::size_t>(i) * 3 + j] = acc;
    }
  // rmsd of R(a - ca) vs (b - cb)
  double se = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int r = 0; r < 3; ++r) {
      double acc = 0.0;
      for (int k = 0; k < 3; ++k) acc += rot[static_cast<std::size_t>(r) * 3 + k] * (pa.at(i, k) - ca[static_cast<std::size_t>(k)]);
      const double diff = acc - (pb.at(i, r) - cb[static_cast<std::size_t>(r)]);
      se += diff * diff;
    }
  }
  return std::sqrt(se / n);
}

double best_rmsd_over_row_matchings(const Tensor& a, const Tensor& b) {
  // try all 4! row assignments, take the best Kabsch rmsd
  std::vector<int> perm = {0, 1, 2, 3};
  double best = 1e300;
  do {
    std::vector<double> rows(12);
    for (int i = 0; i < 4; ++i)
      for (int c = 0; c < 3; ++c) rows[static_cast<std::size_t>(i) * 3 + c] = b.at(perm[static_cast<std::size_t>(i)], c);
    best = std::min(best, kabsch_min_rmsd(a, Tensor::matrix(4, 3, rows)));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

std::string temp_path(const char* name) {
  return std::string("/tmp/canonae_test_") + name;
}

}  // namespace

TEST_CASE("tetris generator: exact constants without noise, bitwise determinism") {
  const Dataset ds = gen_tetris(16, 0.0, 7, false);
  REQUIRE(ds.size() == 16);
  for (int i = 0; i < 16; ++i) {
    const Tensor expect = tetris_shape(i % 8);
    CHECK(std::memcmp(ds[static_cast<std::size_t>(i)].cloud.positions.data().data(), expect.data().data(),
                      12 * sizeof(double)) == 0);
    CHECK(*ds[static_cast<std::size_t>(i)].cloud.label == i % 8);
  }

  const Dataset a = gen_tetris(64, 0.01, 123, true);
  const Dataset b = gen_tetris(64, 0.01, 123, true);
  for (std::size_t i = 0; i < a.size(); ++i)
    CHECK(std::memcmp(a[i].cloud.positions.data().data(), b[i].cloud.positions.data().data(),
                      12 * sizeof(double)) == 0);

  CHECK_THROWS_AS(gen_tetris(4, 0.0, 1, false), std::invalid_argument);
}

TEST_CASE("chiral pair cannot be aligned by any proper rotation (Kabsch oracle)") {
  const Tensor l = tetris_shape(0);
  const Tensor j = tetris_shape(1);
  // over every row matching, the best proper-rotation alignment stays far off
  CHECK(best_rmsd_over_row_matchings(l, j) > 1e-3);

  // sanity: a rotated copy of the same shape aligns to ~0
  Rng rng(5);
  const GroupElement rot = random_element(GroupTag::SO3, 3, rng);
  const Tensor moved = apply(rot, l);
  CHECK(kabsch_min_rmsd(l, moved) < 1e-9);

  // and 1e4 random rotations never align the chiral pair either
  double best = 1e300;
  for (int it = 0; it < 10000; ++it) {
    const GroupElement r = random_element(GroupTag::SO3, 3, rng);
    const Tensor rl = apply(r, l);
    // centered rms against j over the identity row matching
    double se = 0.0;
    for (int i = 0; i < 12; ++i) {
      const double d = rl.at(i) - j.at(i);
      se += d * d;
    }
    best = std::min(best, std::sqrt(se / 4.0));
  }
  CHECK(best > 1e-3);
}

TEST_CASE("tetris noise statistics within 10% of sigma") {
  const double sigma = 0.01;
  const Dataset ds = gen_tetris(10000, sigma, 99, false);
  double sq = 0.0;
  long long cnt = 0;
  for (const Sample& s : ds) {
    const Tensor base = tetris_shape(*s.cloud.label);
    for (int i = 0; i < 12; ++i) {
      const double d = s.cloud.positions.at(i) - base.at(i);
      sq += d * d;
      ++cnt;
    }
  }
  const double emp = std::sqrt(sq / static_cast<double>(cnt));
  CHECK(emp > sigma * 0.9);
  CHECK(emp < sigma * 1.1);
}

TEST_CASE("digit set generator") {
  CHECK(multiset_coefficient(3, 100) == 5151);
  CHECK(multiset_coefficient(2, 2) == 3);

  // N=2, D=2: exactly the three multisets {00, 01, 11}
  const Dataset all3 = gen_digit_sets(2, 2, 3, 11);
  std::set<std::array<int, 2>> hists;
  for (const Sample& s : all3) {
    std::array<int, 2> h{};
    for (int i = 0; i < 2; ++i)
      for (int c = 0; c < 2; ++c)
        if (s.digits.rows.at(i, c) == 1.0) ++h[static_cast<std::size_t>(c)];
    hists.insert(h);
  }
  CHECK(hists.size() == 3);

  try {
    gen_digit_sets(100, 3, 6000, 1);
    FAIL("expected count error");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("5151") != std::string::npos);
  }

  // histograms pairwise distinct (brute force)
  const Dataset ds = gen_digit_sets(6, 4, 40, 17);
  std::vector<std::vector<int>> seen;
  for (const Sample& s : ds) {
    std::vector<int> h(4, 0);
    for (int i = 0; i < 6; ++i)
      for (int c = 0; c < 4; ++c)
        if (s.digits.rows.at(i, c) == 1.0) ++h[static_cast<std::size_t>(c)];
    for (const auto& other : seen) CHECK(other != h);
    seen.push_back(h);
    // rows are one-hot
    for (int i = 0; i < 6; ++i) {
      double sum = 0.0;
      for (int c = 0; c < 4; ++c) sum += s.digits.rows.at(i, c);
      CHECK(sum == 1.0);
    }
  }
}

TEST_CASE("dataset files round-trip bit-exactly and report parse errors by line") {
  const std::string path = temp_path("roundtrip.jsonl");
  Dataset ds = gen_tetris(12, 0.01, 3, true);
  Dataset digits = gen_digit_sets(5, 3, 4, 9);
  ds.insert(ds.end(), digits.begin(), digits.end());
  save_dataset(path, ds);
  const Dataset back = load_dataset(path);
  REQUIRE(back.size() == ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(back[i].kind == ds[i].kind);
    const Tensor& a = ds[i].kind == Sample::Kind::PointCloud ? ds[i].cloud.positions : ds[i].digits.rows;
    const Tensor& b = back[i].kind == Sample::Kind::PointCloud ? back[i].cloud.positions : back[i].digits.rows;
    CHECK(std::memcmp(a.data().data(), b.data().data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0);
  }

  // malformed record reports its line number
  const std::string bad = temp_path("bad.jsonl");
  {
    std::ofstream f(bad);
    f << "not json at all\n";
  }
  try {
    load_dataset(bad);
    FAIL("expected parse error");
  } catch (const ParseError& e) {
    CHECK(e.line == 1);
  }
  {
    std::ofstream f(bad);
    f << "{\"kind\":\"pointcloud\",\"positions\":{\"shape\":[1,3],\"data\":[1,2,3]}}\n";
    f << "{\"kind\":\"pointcloud\",\"positions\":{\"shape\":[1,3]\n";  // truncated line 2
  }
  try {
    load_dataset(bad);
    FAIL("expected parse error");
  } catch (const ParseError& e) {
    CHECK(e.line == 2);
  }
  std::remove(path.c_str());
  std::remove(bad.c_str());
}

TEST_CASE("2d cloud generator is deterministic and rotation-augmented") {
  const Dataset a = gen_clouds2d(20, 5, 3, 0.01, 42, true);
  const Dataset b = gen_clouds2d(20, 5, 3, 0.01, 42, true);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(std::memcmp(a[i].cloud.positions.data().data(), b[i].cloud.positions.data().data(),
                      sizeof(double) * 10) == 0);
    CHECK(*a[i].cloud.label == static_cast<int>(i) % 3);
  }
  // without augmentation the class-0 samples only differ by noise
  const Dataset plain = gen_clouds2d(6, 5, 3, 0.0, 1, false);
  CHECK(std::memcmp(plain[0].cloud.positions.data().data(), plain[3].cloud.positions.data().data(),
                    sizeof(double) * 10) == 0);
}
