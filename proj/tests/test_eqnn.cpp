#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "canonae/groups.hpp"
#include "canonae/nn.hpp"
#include "canonae/rng.hpp"
#include "canonae/verify.hpp"

using namespace canonae;

TEST_CASE("set encoder: invariance, single element, hand-computed toy forward") {
  Rng init(3);
  ParamStore ps;
  SetEncoderCfg cfg;
  cfg.hidden = 12;
  cfg.feat = 12;
  cfg.zdim = 6;
  init_set_encoder(ps, "enc", 4, cfg, init);
  const Ctx ctx{ps, nullptr};

  Rng rng(4);
  std::vector<double> rows(5 * 4);
  for (double& v : rows) v = rng.uniform(-1, 1);
  const Tensor x = Tensor::matrix(5, 4, rows);
  const SetEncoding a = set_encode(ctx, "enc", x, cfg);
  const GroupElement p = random_element(GroupTag::Perm, 5, rng);
  const SetEncoding b = set_encode(ctx, "enc", apply(p, x), cfg);
  CHECK(std::memcmp(a.z.data().data(), b.z.data().data(), sizeof(double) * 6) == 0);

  // single-element set: z = beta(gamma(x))
  const Tensor one = Tensor::matrix(1, 4, {0.5, -0.2, 0.8, 0.1});
  const SetEncoding se = set_encode(ctx, "enc", one, cfg);
  Tensor g = mlp(ctx, "enc.gamma", one, cfg.gamma_layers, Act::Relu, Act::Relu);
  Tensor zb = mlp(ctx, "enc.beta", g, cfg.beta_layers, Act::Relu, Act::None);
  for (int i = 0; i < 6; ++i) CHECK(se.z.at(i) == zb.at(i));

  // toy weights small enough to evaluate by hand:
  // gamma = identity (relu of nonneg), pooled = sum, beta = [1,1] + 0.5
  ParamStore toy;
  SetEncoderCfg tcfg;
  tcfg.gamma_layers = 1;
  tcfg.beta_layers = 1;
  tcfg.hidden = 2;
  tcfg.feat = 2;
  tcfg.zdim = 1;
  Rng dummy(1);
  init_set_encoder(toy, "enc", 2, tcfg, dummy);
  toy.set("enc.gamma.l0.w", Tensor::matrix(2, 2, {1, 0, 0, 1}));
  toy.set("enc.gamma.l0.b", Tensor::vec({0, 0}));
  toy.set("enc.beta.l0.w", Tensor::matrix(2, 1, {1, 1}));
  toy.set("enc.beta.l0.b", Tensor::vec({0.5}));
  toy.set("enc.score.w", Tensor::matrix(2, 1, {1, -1}));
  toy.set("enc.score.b", Tensor::vec({0}));
  const Ctx tctx{toy, nullptr};
  const Tensor set01 = Tensor::matrix(2, 2, {1, 0, 0, 1});
  const SetEncoding t = set_encode(tctx, "enc", set01, tcfg);
  // gamma(x) = x; sum = (1,1); z = 1 + 1 + 0.5
  CHECK(t.z.item() == doctest::Approx(2.5).epsilon(1e-15));
  // scores: row (1,0) -> 1, row (0,1) -> -1
  CHECK(t.scores.at(0) == 1.0);
  CHECK(t.scores.at(1) == -1.0);

  CHECK_THROWS(set_encode(ctx, "enc", Tensor(), cfg));
}

TEST_CASE("softsort values, limits, temperature validation") {
  // hand-computed 2x2 case: row 1 logits (0,-1), row 2 logits (-1,0)
  const Tensor p = softsort(Tensor::vec({0, 1}), 1.0);
  const double e0 = 1.0, e1 = std::exp(-1.0);
  CHECK(p.at(0, 0) == doctest::Approx(e0 / (e0 + e1)).epsilon(1e-12));
  CHECK(p.at(0, 1) == doctest::Approx(e1 / (e0 + e1)).epsilon(1e-12));
  CHECK(std::fabs(p.at(0, 0) - 0.7311) < 1e-3);
  CHECK(std::fabs(p.at(1, 1) - 0.7311) < 1e-3);

  // sorted input, tiny temperature -> identity
  const Tensor pid = softsort(Tensor::vec({-2, -1, 0, 3}), 1e-4);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) CHECK(std::fabs(pid.at(i, j) - (i == j ? 1 : 0)) < 1e-6);

  // rows sum to one for any s, tau
  Rng rng(6);
  for (int it = 0; it < 20; ++it) {
    const int n = 2 + rng.below(5);
    std::vector<double> s(static_cast<std::size_t>(n));
    for (double& v : s) v = rng.uniform(-4, 4);
    const Tensor q = softsort(Tensor::vec(s), rng.uniform(0.01, 3.0));
    for (int i = 0; i < n; ++i) {
      double rs = 0.0;
      for (int j = 0; j < n; ++j) rs += q.at(i, j);
      CHECK(std::fabs(rs - 1.0) < 1e-9);
    }
  }

  CHECK_THROWS_AS(softsort(Tensor::vec({1, 2}), 0.0), std::invalid_argument);
  CHECK_THROWS_AS(softsort(Tensor::vec({1, 2}), -1.0), std::invalid_argument);
}

TEST_CASE("harden: identity-like, agreement with xi_perm, collision resolution") {
  const Tensor diag = Tensor::matrix(2, 2, {0.9, 0.1, 0.1, 0.9});
  CHECK(element_distance(harden(diag), GroupElement::perm({0, 1})) == 0.0);

  CHECK(element_distance(harden(softsort(Tensor::vec({3, 1, 2}), 1e-3)), xi_perm({3, 1, 2})) == 0.0);

  // two rows share an argmax; the greedy pass must still return a bijection
  const Tensor clash = Tensor::matrix(3, 3,
                                      {0.8, 0.15, 0.05,   //
                                       0.7, 0.2, 0.1,     //
                                       0.1, 0.3, 0.6});
  const GroupElement h = harden(clash);
  const auto& sigma = h.as<Perm>().sigma;
  std::vector<char> seen(3, 0);
  for (int v : sigma) {
    CHECK(v >= 0);
    CHECK(v < 3);
    seen[static_cast<std::size_t>(v)] = 1;
  }
  CHECK(static_cast<int>(seen[0]) + seen[1] + seen[2] == 3);
}

TEST_CASE("message-passing layer: empty neighborhoods and the a x a = 0 term") {
  Rng init(8);
  ParamStore ps;
  GnnCfg cfg;
  cfg.fs = 6;
  cfg.fv = 4;
  cfg.layers = 1;
  cfg.dim = 3;
  cfg.translation = true;
  cfg.cutoff = 0.5;  // nodes far apart: no neighbors
  init_gnn(ps, "g", cfg, init, NodeFeatureInit::SharedVector);
  const Ctx ctx{ps, nullptr};
  const Tensor far = Tensor::matrix(2, 3, {0, 0, 0, 10, 0, 0});
  NodeState st = init_node_state(ctx, "g", far, cfg, NodeFeatureInit::SharedVector);
  NodeState out = se3_layer(ctx, "g.layer0", st, cfg);
  CHECK(std::memcmp(out.h.data().data(), st.h.data().data(), sizeof(double) * 12) == 0);
  CHECK(std::memcmp(out.t.data().data(), st.t.data().data(), sizeof(double) * 6) == 0);

  // the cross-product term vanishes when both vector features coincide
  const Tensor w = Tensor::matrix(3, 4, {0.3, -1, 0.5, 2, 1, 0.2, -0.7, 0.4, 0.9, -0.1, 0.6, 1.1});
  const Tensor c = cross_cols(w, w);
  for (int i = 0; i < c.size(); ++i) CHECK(c.at(i) == 0.0);

  // translation update requested on a k=0 state
  GnnCfg bad = cfg;
  bad.cutoff = 100.0;
  bad.translation = true;
  NodeState no_t = st;
  no_t.t = Tensor();
  CHECK_THROWS_AS(se3_layer(ctx, "g.layer0", no_t, bad), std::invalid_argument);
}

TEST_CASE("positional symmetry breaking") {
  Rng init(9);
  ParamStore ps;
  init_symmetry_break(ps, "sb", 3, 8, 5, 3, init);
  const Ctx ctx{ps, nullptr};
  const Tensor z = Tensor::vec({0.3, -0.7, 1.1});

  const Tensor rows = positional_symmetry_break(ctx, "sb", z, 5, 8);
  REQUIRE(rows.shape() == Shape{5, 8});

  // n = 1: the single row equals proj(z) + posenc(0)
  const Tensor one = positional_symmetry_break(ctx, "sb", z, 1, 8);
  const Tensor proj = dense(ctx, "sb.proj", reshape(z, {1, 3}));
  const Tensor table = positional_encoding_table(1, 8);
  for (int c = 0; c < 8; ++c) CHECK(one.at(0, c) == doctest::Approx(proj.at(0, c) + table.at(0, c)).epsilon(1e-15));

  // rows pairwise distinct
  for (int i = 0; i < 5; ++i)
    for (int j = i + 1; j < 5; ++j) {
      double d = 0.0;
      for (int c = 0; c < 8; ++c) d = std::max(d, std::fabs(rows.at(i, c) - rows.at(j, c)));
      CHECK(d > 1e-9);
    }

  // start positions exposed as a trainable parameter
  CHECK(ps.get("sb.start").shape() == Shape{5, 3});
}

TEST_CASE("parameter checkpoints round-trip through JSON") {
  Rng init(10);
  ParamStore ps;
  init_mlp(ps, "net", 3, 5, 2, 2, init);
  const std::string text = ps.to_json();
  const ParamStore back = ParamStore::from_json(text);
  for (const auto& name : ps.names()) {
    const Tensor& a = ps.get(name);
    const Tensor& b = back.get(name);
    REQUIRE(a.shape() == b.shape());
    CHECK(std::memcmp(a.data().data(), b.data().data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0);
  }
  CHECK_THROWS(ParamStore::from_json("{\"format\":\"other\",\"params\":{}}"));
}

TEST_CASE("eqnn property suite passes") {
  const SuiteReport rep = verify_eqnn(1);
  for (const auto& c : rep.checks) {
    INFO(c.name, " measured ", c.measured, " tolerance ", c.tolerance);
    CHECK(c.pass);
  }
}
