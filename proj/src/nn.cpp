#include "canonae/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

namespace canonae {

namespace {
using nlohmann::json;
constexpr const char* kCheckpointFormat = "canonae-params-v1";
}  // namespace

// ---------------------------------------------------------------------------
// ParamStore

Tensor& ParamStore::create(const std::string& name, Tensor init) {
  if (map_.count(name)) throw std::logic_error("parameter '" + name + "' already exists");
  order_.push_back(name);
  return map_[name] = std::move(init);
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = map_.find(name);
  if (it == map_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  return it->second;
}

void ParamStore::set(const std::string& name, Tensor value) {
  auto it = map_.find(name);
  if (it == map_.end()) throw std::out_of_range("unknown parameter '" + name + "'");
  if (value.shape() != it->second.shape())
    throw std::invalid_argument("parameter '" + name + "' shape change " + shape_str(it->second.shape()) +
                                " -> " + shape_str(value.shape()));
  it->second = std::move(value);
}

long long ParamStore::scalar_count() const {
  long long n = 0;
  for (const auto& name : order_) n += map_.at(name).size();
  return n;
}

std::string ParamStore::to_json() const {
  json j;
  j["format"] = kCheckpointFormat;
  json params = json::object();
  for (const auto& name : order_) {
    const Tensor& t = map_.at(name);
    json e;
    e["shape"] = t.shape();
    e["data"] = std::vector<double>(t.data().begin(), t.data().end());
    params[name] = std::move(e);
  }
  j["params"] = std::move(params);
  return j.dump();
}

ParamStore ParamStore::from_json(const std::string& text) {
  const json j = json::parse(text);
  if (j.at("format").get<std::string>() != kCheckpointFormat)
    throw std::runtime_error("unsupported checkpoint format '" + j.at("format").get<std::string>() + "'");
  ParamStore ps;
  // json objects iterate in key order; order parameters by name for stability
  for (const auto& [name, e] : j.at("params").items())
    ps.create(name, Tensor(e.at("shape").get<Shape>(), e.at("data").get<std::vector<double>>()));
  return ps;
}

Tensor Ctx::p(const std::string& name) const {
  const Tensor& v = params.get(name);
  return tape ? tape->watch(v) : v;
}

// ---------------------------------------------------------------------------
// Dense / MLP

namespace {

Tensor activate(const Tensor& x, Act act) {
  switch (act) {
    case Act::None: return x;
    case Act::Relu: return relu(x);
    case Act::Tanh: return tanh_t(x);
    case Act::Sigmoid: return sigmoid(x);
  }
  return x;
}

}  // namespace

Tensor xavier_init(int in, int out, Rng& rng) {
  const double limit = std::sqrt(6.0 / (in + out));
  std::vector<double> w(static_cast<std::size_t>(in) * out);
  for (double& v : w) v = rng.uniform(-limit, limit);
  return Tensor::matrix(in, out, std::move(w));
}

void init_dense(ParamStore& ps, const std::string& prefix, int in, int out, Rng& rng) {
  ps.create(prefix + ".w", xavier_init(in, out, rng));
  ps.create(prefix + ".b", Tensor::zeros({out}));
}

Tensor dense(const Ctx& ctx, const std::string& prefix, const Tensor& x, Act act) {
  Tensor y = add(matmul(x, ctx.p(prefix + ".w")), ctx.p(prefix + ".b"));
  return activate(y, act);
}

void init_mlp(ParamStore& ps, const std::string& prefix, int in, int hidden, int out, int layers, Rng& rng) {
  if (layers < 1) throw std::invalid_argument("mlp: need at least one layer");
  for (int l = 0; l < layers; ++l) {
    const int li = l == 0 ? in : hidden;
    const int lo = l == layers - 1 ? out : hidden;
    init_dense(ps, prefix + ".l" + std::to_string(l), li, lo, rng);
  }
}

Tensor mlp(const Ctx& ctx, const std::string& prefix, const Tensor& x, int layers, Act hidden_act, Act final_act) {
  Tensor h = x;
  for (int l = 0; l < layers; ++l)
    h = dense(ctx, prefix + ".l" + std::to_string(l), h, l == layers - 1 ? final_act : hidden_act);
  return h;
}

// ---------------------------------------------------------------------------
// Set encoder

std::vector<int> canonical_row_order(const Tensor& rows) {
  const int n = rows.rows(), d = rows.cols();
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    for (int c = 0; c < d; ++c) {
      const double va = rows.at(a, c), vb = rows.at(b, c);
      if (va != vb) return va < vb;
    }
    return false;
  });
  return idx;
}

namespace {

// per-feature standardization over the set elements
Tensor set_standardize(const Tensor& x) {
  const int n = x.rows();
  Tensor mean = reduce(Reduce::Mean, x, 0);                       // [F]
  Tensor centered = sub(x, reshape(mean, {1, x.cols()}));         // [N,F]
  Tensor var = reduce(Reduce::Mean, mul(centered, centered), 0);  // [F]
  Tensor stddev = sqrt_t(add(var, 1e-8));
  (void)n;
  return div(centered, reshape(stddev, {1, x.cols()}));
}

}  // namespace

void init_set_encoder(ParamStore& ps, const std::string& prefix, int in_dim, const SetEncoderCfg& cfg, Rng& rng) {
  init_mlp(ps, prefix + ".gamma", in_dim, cfg.hidden, cfg.feat, cfg.gamma_layers, rng);
  init_mlp(ps, prefix + ".beta", cfg.feat, cfg.hidden, cfg.zdim, cfg.beta_layers, rng);
  init_dense(ps, prefix + ".score", cfg.feat, 1, rng);
}

SetEncoding set_encode(const Ctx& ctx, const std::string& prefix, const Tensor& rows, const SetEncoderCfg& cfg) {
  if (rows.rank() != 2 || rows.rows() < 1) throw std::invalid_argument("set_encode: non-empty [N,D] rows required");
  Tensor g = mlp(ctx, prefix + ".gamma", rows, cfg.gamma_layers, Act::Relu, Act::Relu);
  if (cfg.set_norm) g = set_standardize(g);
  // summing in canonical row order makes the aggregate bitwise
  // permutation-invariant
  const auto order = canonical_row_order(rows);
  Tensor pooled = reduce(Reduce::Sum, gather_rows(g, order), 0);  // [feat]
  Tensor z = mlp(ctx, prefix + ".beta", reshape(pooled, {1, cfg.feat}), cfg.beta_layers, Act::Relu, Act::None);
  Tensor scores = dense(ctx, prefix + ".score", g);  // [N,1]
  SetEncoding out;
  out.z = reshape(z, {cfg.zdim});
  out.per_element = g;
  out.scores = reshape(scores, {rows.rows()});
  return out;
}

// ---------------------------------------------------------------------------
// softsort / harden

Tensor softsort(const Tensor& s, double tau) {
  if (s.rank() != 1) throw std::invalid_argument("softsort: rank-1 scores required, got " + shape_str(s.shape()));
  if (!(tau > 0.0)) throw std::invalid_argument("softsort: tau must be positive");
  const int n = s.shape()[0];
  std::vector<double> vals(s.data().begin(), s.data().end());
  const auto order = argsort(vals);
  Tensor col = gather_rows(reshape(s, {n, 1}), order);  // sort(s) as a column
  Tensor dist = abs_t(sub(col, reshape(s, {1, n})));    // [n,n] via broadcast
  return softmax_rows(div(dist, -tau));
}

GroupElement harden(const Tensor& relaxed) {
  if (relaxed.rank() != 2 || relaxed.rows() != relaxed.cols())
    throw std::invalid_argument("harden: square matrix required, got " + shape_str(relaxed.shape()));
  const int n = relaxed.rows();
  // rows ordered by their top confidence, then greedy column assignment
  std::vector<int> row_order(static_cast<std::size_t>(n));
  std::iota(row_order.begin(), row_order.end(), 0);
  std::vector<double> conf(static_cast<std::size_t>(n), 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) conf[static_cast<std::size_t>(i)] = std::max(conf[static_cast<std::size_t>(i)], relaxed.at(i, j));
  std::stable_sort(row_order.begin(), row_order.end(),
                   [&](int a, int b) { return conf[static_cast<std::size_t>(a)] > conf[static_cast<std::size_t>(b)]; });

  std::vector<int> row_to_col(static_cast<std::size_t>(n), -1);
  std::vector<char> taken(static_cast<std::size_t>(n), 0);
  for (int r : row_order) {
    int best = -1;
    double bv = -1.0;
    for (int j = 0; j < n; ++j) {
      if (taken[static_cast<std::size_t>(j)]) continue;
      if (relaxed.at(r, j) > bv) {
        bv = relaxed.at(r, j);
        best = j;
      }
    }
    row_to_col[static_cast<std::size_t>(r)] = best;
    taken[static_cast<std::size_t>(best)] = 1;
  }
  // row i of the relaxed matrix selects the element of sorted position i, so
  // the element-as-action gathers with the inverse assignment
  std::vector<int> sigma(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) sigma[static_cast<std::size_t>(row_to_col[static_cast<std::size_t>(i)])] = i;
  return GroupElement::perm(std::move(sigma));
}

// ---------------------------------------------------------------------------
// Equivariant GNN

void init_gated_block(ParamStore& ps, const std::string& prefix, int fs, int fv, Rng& rng) {
  ps.create(prefix + ".u", xavier_init(fv, fv, rng));
  ps.create(prefix + ".v", xavier_init(fv, fv, rng));
  init_mlp(ps, prefix + ".mix", fs + fv, fs + fv, fs + fv, 2, rng);
}

std::pair<Tensor, Tensor> gated_equivariant_block(const Ctx& ctx, const std::string& prefix,
                                                  const Tensor& h_row, const Tensor& w_node, int fs, int fv) {
  Tensor uw = matmul(w_node, ctx.p(prefix + ".u"));  // [dim, fv]
  Tensor vw = matmul(w_node, ctx.p(prefix + ".v"));
  // stabilized column norms: invariant under rotation of w
  Tensor sq = reduce(Reduce::Sum, mul(vw, vw), 0);  // [fv]
  Tensor norms = sqrt_t(add(sq, 1e-12));
  Tensor mixed = mlp(ctx, prefix + ".mix", concat_cols({h_row, reshape(norms, {1, fv})}), 2, Act::Relu, Act::None);
  Tensor dh = slice_cols(mixed, 0, fs);
  Tensor gate = slice_cols(mixed, fs, fs + fv);  // [1, fv], scales uw columns
  Tensor h_out = add(h_row, dh);
  Tensor w_out = add(w_node, mul(uw, gate));
  return {h_out, w_out};
}

void init_gnn(ParamStore& ps, const std::string& prefix, const GnnCfg& cfg, Rng& rng,
              NodeFeatureInit feat_init, int feature_dim) {
  const int k = cfg.translation ? 1 : 0;
  auto shrink = [&ps](const std::string& name, double f) {
    const Tensor& t = ps.get(name);
    std::vector<double> v(t.data().begin(), t.data().end());
    for (double& x : v) x *= f;
    ps.set(name, Tensor(t.shape(), std::move(v)));
  };
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string lp = prefix + ".layer" + std::to_string(l);
    init_dense(ps, lp + ".edge", 2 * cfg.fs + 1, cfg.fs + 2 * cfg.fv + k, rng);
    init_dense(ps, lp + ".self", cfg.fs, cfg.fs, rng);
    init_gated_block(ps, lp + ".gate", cfg.fs, cfg.fv, rng);
    // the message update is bilinear in h and the cross term quadratic in w,
    // so residual branches start small to keep the per-layer gain under one
    // at depth 5; the gate output stays nonzero, otherwise the antisymmetric
    // pair sums leave the averaged frame columns rank-deficient
    shrink(lp + ".edge.w", 0.25);
    shrink(lp + ".self.w", 0.25);
    shrink(lp + ".gate.mix.l1.w", 0.05);
  }
  if (feat_init == NodeFeatureInit::SharedVector) {
    std::vector<double> h0(static_cast<std::size_t>(cfg.fs));
    for (double& v : h0) v = rng.uniform(-0.5, 0.5);
    ps.create(prefix + ".h0", Tensor::matrix(1, cfg.fs, std::move(h0)));
  } else if (feat_init == NodeFeatureInit::Features) {
    init_dense(ps, prefix + ".embed", feature_dim, cfg.fs, rng);
  }  // IndexOneHot and External create no feature parameters
}

NodeState init_node_state(const Ctx& ctx, const std::string& prefix, const Tensor& positions,
                          const GnnCfg& cfg, NodeFeatureInit feat_init,
                          const std::optional<Tensor>& features) {
  const int n = positions.rows();
  NodeState st;
  st.positions = positions;
  switch (feat_init) {
    case NodeFeatureInit::SharedVector: {
      Tensor h0 = ctx.p(prefix + ".h0");
      st.h = concat_rows(std::vector<Tensor>(static_cast<std::size_t>(n), h0));
      break;
    }
    case NodeFeatureInit::IndexOneHot: {
      std::vector<double> h(static_cast<std::size_t>(n) * cfg.fs, 0.0);
      for (int i = 0; i < n; ++i) h[static_cast<std::size_t>(i) * cfg.fs + (i % cfg.fs)] = 1.0;
      st.h = Tensor::matrix(n, cfg.fs, std::move(h));
      break;
    }
    case NodeFeatureInit::Features: {
      if (!features) throw std::invalid_argument("init_node_state: features required");
      st.h = dense(ctx, prefix + ".embed", *features);
      break;
    }
    case NodeFeatureInit::External:
      throw std::invalid_argument("init_node_state: External states are built by the caller");
  }
  st.w.assign(static_cast<std::size_t>(n), Tensor::zeros({cfg.dim, cfg.fv}));
  if (cfg.translation) st.t = positions;
  return st;
}

NodeState se3_layer(const Ctx& ctx, const std::string& prefix, const NodeState& state, const GnnCfg& cfg) {
  const int n = state.h.rows();
  const int fs = cfg.fs, fv = cfg.fv, dim = cfg.dim;
  const int k = cfg.translation ? 1 : 0;
  if (k == 1 && state.t.empty())
    throw std::invalid_argument("se3_layer: translation update requested on a k=0 state");

  // neighborhoods from position values, self excluded (ascending (i, j))
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      double d2 = 0.0;
      for (int c = 0; c < dim; ++c) {
        const double diff = state.positions.at(j, c) - state.positions.at(i, c);
        d2 += diff * diff;
      }
      if (std::sqrt(d2) <= cfg.cutoff) pairs.emplace_back(i, j);
    }
  }
  if (pairs.empty()) return state;

  const int np = static_cast<int>(pairs.size());
  std::vector<char> has_neighbor(static_cast<std::size_t>(n), 0);
  for (const auto& [i, j] : pairs) has_neighbor[static_cast<std::size_t>(i)] = 1;

  // edge messages in one batched affine map
  std::vector<Tensor> xij(static_cast<std::size_t>(np));
  std::vector<Tensor> edge_rows(static_cast<std::size_t>(np));
  for (int p = 0; p < np; ++p) {
    const auto [i, j] = pairs[static_cast<std::size_t>(p)];
    Tensor xi = slice_rows(state.positions, i, i + 1);
    Tensor xj = slice_rows(state.positions, j, j + 1);
    Tensor x = sub(xj, xi);
    xij[static_cast<std::size_t>(p)] = x;
    Tensor d = sqrt_t(sum_all(mul(x, x)));
    edge_rows[static_cast<std::size_t>(p)] =
        concat_cols({slice_rows(state.h, i, i + 1), slice_rows(state.h, j, j + 1), reshape(d, {1, 1})});
  }
  Tensor messages = dense(ctx, prefix + ".edge", concat_rows(edge_rows));  // [np, fs+2fv+k]
  Tensor mh = slice_cols(messages, 0, fs);
  Tensor mw0 = slice_cols(messages, fs, fs + fv);
  Tensor mw1 = slice_cols(messages, fs + fv, fs + 2 * fv);
  Tensor mt = k ? slice_cols(messages, fs + 2 * fv, fs + 2 * fv + k) : Tensor();

  // invariant channel: h_i += (sum_j mh_ij) * (Ws h_i + bs)
  std::vector<double> agg(static_cast<std::size_t>(n) * np, 0.0);
  for (int p = 0; p < np; ++p)
    agg[static_cast<std::size_t>(pairs[static_cast<std::size_t>(p)].first) * np + p] = 1.0;
  Tensor aggregate = Tensor::matrix(n, np, std::move(agg));
  Tensor h_self = dense(ctx, prefix + ".self", state.h);
  Tensor h_new = add(state.h, mul(matmul(aggregate, mh), h_self));

  // equivariant channel
  std::vector<Tensor> w_new(state.w.begin(), state.w.end());
  for (int p = 0; p < np; ++p) {
    const auto [i, j] = pairs[static_cast<std::size_t>(p)];
    Tensor term = matmul(transpose(xij[static_cast<std::size_t>(p)]), slice_rows(mw0, p, p + 1));  // [dim, fv]
    if (dim == 3) {
      Tensor crossed = cross_cols(state.w[static_cast<std::size_t>(i)], state.w[static_cast<std::size_t>(j)]);
      term = add(term, mul(crossed, slice_rows(mw1, p, p + 1)));
    }
    w_new[static_cast<std::size_t>(i)] = add(w_new[static_cast<std::size_t>(i)], term);
  }

  // translation channel
  Tensor t_new = state.t;
  if (k) {
    std::vector<Tensor> t_rows;
    t_rows.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) t_rows.push_back(slice_rows(state.t, i, i + 1));
    for (int p = 0; p < np; ++p) {
      const auto [i, j] = pairs[static_cast<std::size_t>(p)];
      Tensor scaled = mul(xij[static_cast<std::size_t>(p)], reshape(slice_rows(mt, p, p + 1), Shape{1, 1}));
      t_rows[static_cast<std::size_t>(i)] = add(t_rows[static_cast<std::size_t>(i)], scaled);
    }
    t_new = concat_rows(t_rows);
  }

  // gated block, nodes with at least one neighbor only
  std::vector<Tensor> h_rows;
  h_rows.reserve(static_cast<std::size_t>(n));
  NodeState out;
  out.w.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    if (!has_neighbor[static_cast<std::size_t>(i)]) {
      h_rows.push_back(slice_rows(state.h, i, i + 1));
      out.w[static_cast<std::size_t>(i)] = state.w[static_cast<std::size_t>(i)];
      continue;
    }
    auto [hg, wg] = gated_equivariant_block(ctx, prefix + ".gate", slice_rows(h_new, i, i + 1),
                                            w_new[static_cast<std::size_t>(i)], fs, fv);
    h_rows.push_back(hg);
    out.w[static_cast<std::size_t>(i)] = wg;
  }
  out.h = concat_rows(h_rows);
  out.t = t_new;
  out.positions = state.positions;
  return out;
}

NodeState run_gnn(const Ctx& ctx, const std::string& prefix, NodeState state, const GnnCfg& cfg) {
  for (int l = 0; l < cfg.layers; ++l)
    state = se3_layer(ctx, prefix + ".layer" + std::to_string(l), state, cfg);
  return state;
}

// ---------------------------------------------------------------------------
// Symmetry breaking

Tensor positional_encoding_table(int n, int dim) {
  std::vector<double> pe(static_cast<std::size_t>(n) * dim);
  for (int i = 0; i < n; ++i) {
    for (int c = 0; c < dim; ++c) {
      const double freq = std::pow(10000.0, -static_cast<double>(c - c % 2) / dim);
      const double v = i * freq;
      pe[static_cast<std::size_t>(i) * dim + c] = c % 2 == 0 ? std::sin(v) : std::cos(v);
    }
  }
  return Tensor::matrix(n, dim, std::move(pe));
}

void init_symmetry_break(ParamStore& ps, const std::string& prefix, int zdim, int fs, int n, int dim, Rng& rng,
                         bool with_start) {
  init_dense(ps, prefix + ".proj", zdim, fs, rng);
  if (!with_start) return;
  std::vector<double> start(static_cast<std::size_t>(n) * dim);
  for (double& v : start) v = rng.uniform(-1.0, 1.0);
  ps.create(prefix + ".start", Tensor::matrix(n, dim, std::move(start)));
}

Tensor positional_symmetry_break(const Ctx& ctx, const std::string& prefix, const Tensor& z, int n, int fs) {
  const Tensor table = positional_encoding_table(n, fs);
  const int zdim = z.size();
  Tensor h = dense(ctx, prefix + ".proj", reshape(z, {1, zdim}));  // [1, fs]
  return add(table, h);                                            // broadcast over rows
}

// ---------------------------------------------------------------------------
// Frame heads

Tensor frame_so2(const Tensor& v) {
  Tensor flat = reshape(v, {1, 2});
  const double nval = std::sqrt(flat.at(0, 0) * flat.at(0, 0) + flat.at(0, 1) * flat.at(0, 1));
  if (nval < 1e-9) throw DegenerateFrame("frame_so2: near-zero vector");
  Tensor norm = sqrt_t(sum_all(mul(flat, flat)));
  Tensor unit = div(flat, norm);
  Tensor c = slice_cols(unit, 0, 1);
  Tensor s = slice_cols(unit, 1, 2);
  return concat_rows({concat_cols({c, neg(s)}), concat_cols({s, c})});
}

Tensor frame_so3(const Tensor& w_cols) {
  if (w_cols.rank() != 2 || w_cols.rows() != 3 || w_cols.cols() != 2)
    throw std::invalid_argument("frame_so3: [3,2] column pair required, got " + shape_str(w_cols.shape()));
  Tensor y1 = slice_cols(w_cols, 0, 1);
  Tensor y2 = slice_cols(w_cols, 1, 2);

  auto norm_of = [](const Tensor& col) {
    double s = 0.0;
    for (int i = 0; i < 3; ++i) s += col.at(i) * col.at(i);
    return std::sqrt(s);
  };
  const double n1v = norm_of(y1);
  if (n1v < 1e-9) throw DegenerateFrame("frame_so3: first vector near zero");
  const double n2raw = norm_of(y2);
  if (n2raw < 1e-9) throw DegenerateFrame("frame_so3: second vector near zero");

  Tensor n1 = sqrt_t(sum_all(mul(y1, y1)));
  Tensor e1 = div(y1, n1);
  Tensor proj = sum_all(mul(y2, e1));
  Tensor r = sub(y2, mul(e1, proj));
  double rn = 0.0;
  for (int i = 0; i < 3; ++i) rn += r.at(i) * r.at(i);
  if (std::sqrt(rn) < 1e-6 * n2raw) throw DegenerateFrame("frame_so3: vectors near parallel");
  Tensor n2 = sqrt_t(sum_all(mul(r, r)));
  Tensor e2 = div(r, n2);
  Tensor e3 = cross_cols(e1, e2);
  return concat_cols({e1, e2, e3});
}

// ---------------------------------------------------------------------------
// Losses

Tensor mse_loss(const Tensor& a, const Tensor& b) {
  Tensor d = sub(a, b);
  return mean_all(mul(d, d));
}

Tensor cross_entropy_rows(const Tensor& logits, const Tensor& onehot) {
  if (logits.shape() != onehot.shape() || logits.rank() != 2)
    throw std::invalid_argument("cross_entropy_rows: matching [N,D] required");
  const int n = logits.rows();
  Tensor mx = reduce(Reduce::Max, logits, 1);                    // [N]
  Tensor shifted = sub(logits, reshape(mx, {n, 1}));             // [N,D]
  Tensor lse = log_t(reduce(Reduce::Sum, exp_t(shifted), 1));    // [N]
  Tensor logp = sub(shifted, reshape(lse, {n, 1}));              // [N,D]
  return div(sum_all(mul(onehot, logp)), -static_cast<double>(n));
}

}  // namespace canonae
