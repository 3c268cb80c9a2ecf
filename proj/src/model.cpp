#include "canonae/model.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace canonae {

namespace {
using nlohmann::json;
constexpr const char* kModelFormat = "canonae-ckpt-v1";
}  // namespace

std::string task_name(Task t) {
  switch (t) {
    case Task::DigitSets: return "digit-sets";
    case Task::DigitSetsBaseline: return "digit-sets-baseline";
    case Task::Se3PointCloud: return "se3-pointcloud";
    case Task::So2PointSet: return "so2-pointset";
  }
  return "?";
}

Task task_from_name(const std::string& name) {
  if (name == "digit-sets") return Task::DigitSets;
  if (name == "digit-sets-baseline") return Task::DigitSetsBaseline;
  if (name == "se3-pointcloud") return Task::Se3PointCloud;
  if (name == "so2-pointset") return Task::So2PointSet;
  throw std::invalid_argument("unknown task '" + name + "'");
}

void ModelSpec::validate() const {
  auto req = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("model spec: ") + what);
  };
  req(zdim >= 1, "zdim must be >= 1");
  req(fs >= 1 && fv >= 1, "fs/fv must be >= 1");
  req(gnn_layers >= 1 && gamma_layers >= 1 && beta_layers >= 1 && dec_layers >= 1, "layer counts must be >= 1");
  req(hidden >= 1, "hidden must be >= 1");
  req(cutoff > 0, "cutoff must be positive");
  req(tau > 0 && eval_tau > 0, "tau must be positive");
  req(set_n >= 1 && set_d >= 2, "set_n >= 1 and set_d >= 2 required");
  req(cloud_n >= 2, "cloud_n must be >= 2");
  req(lr > 0 && batch >= 1 && epochs >= 0, "optimizer settings invalid");
}

std::string ModelSpec::to_json() const {
  json j;
  j["task"] = task_name(task);
  j["set_n"] = set_n;
  j["set_d"] = set_d;
  j["cloud_n"] = cloud_n;
  j["zdim"] = zdim;
  j["fs"] = fs;
  j["fv"] = fv;
  j["gnn_layers"] = gnn_layers;
  j["hidden"] = hidden;
  j["gamma_layers"] = gamma_layers;
  j["beta_layers"] = beta_layers;
  j["dec_layers"] = dec_layers;
  j["cutoff"] = cutoff;
  j["tau"] = tau;
  j["tau_decay"] = tau_decay;
  j["tau_min"] = tau_min;
  j["eval_tau"] = eval_tau;
  j["set_norm"] = set_norm;
  j["lr"] = lr;
  j["beta1"] = beta1;
  j["beta2"] = beta2;
  j["adam_eps"] = adam_eps;
  j["grad_clip"] = grad_clip;
  j["lr_decay"] = lr_decay;
  j["lr_min"] = lr_min;
  j["epochs"] = epochs;
  j["batch"] = batch;
  j["seed"] = seed;
  j["target_metric"] = target_metric;
  return j.dump();
}

ModelSpec ModelSpec::from_json(const std::string& text) {
  const json j = json::parse(text);
  ModelSpec s;
  for (const auto& [key, value] : j.items()) {
    if (key == "task") s.task = task_from_name(value.get<std::string>());
    else if (key == "set_n") s.set_n = value.get<int>();
    else if (key == "set_d") s.set_d = value.get<int>();
    else if (key == "cloud_n") s.cloud_n = value.get<int>();
    else if (key == "zdim") s.zdim = value.get<int>();
    else if (key == "fs") s.fs = value.get<int>();
    else if (key == "fv") s.fv = value.get<int>();
    else if (key == "gnn_layers") s.gnn_layers = value.get<int>();
    else if (key == "hidden") s.hidden = value.get<int>();
    else if (key == "gamma_layers") s.gamma_layers = value.get<int>();
    else if (key == "beta_layers") s.beta_layers = value.get<int>();
    else if (key == "dec_layers") s.dec_layers = value.get<int>();
    else if (key == "cutoff") s.cutoff = value.get<double>();
    else if (key == "tau") s.tau = value.get<double>();
    else if (key == "tau_decay") s.tau_decay = value.get<double>();
    else if (key == "tau_min") s.tau_min = value.get<double>();
    else if (key == "eval_tau") s.eval_tau = value.get<double>();
    else if (key == "set_norm") s.set_norm = value.get<bool>();
    else if (key == "lr") s.lr = value.get<double>();
    else if (key == "beta1") s.beta1 = value.get<double>();
    else if (key == "beta2") s.beta2 = value.get<double>();
    else if (key == "adam_eps") s.adam_eps = value.get<double>();
    else if (key == "grad_clip") s.grad_clip = value.get<double>();
    else if (key == "lr_decay") s.lr_decay = value.get<double>();
    else if (key == "lr_min") s.lr_min = value.get<double>();
    else if (key == "epochs") s.epochs = value.get<int>();
    else if (key == "batch") s.batch = value.get<int>();
    else if (key == "seed") s.seed = value.get<std::uint64_t>();
    else if (key == "target_metric") s.target_metric = value.get<double>();
    else throw std::invalid_argument("model spec: unknown key '" + key + "'");
  }
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Parameter layout

namespace {

SetEncoderCfg set_encoder_cfg(const ModelSpec& s) {
  SetEncoderCfg c;
  c.gamma_layers = s.gamma_layers;
  c.beta_layers = s.beta_layers;
  c.hidden = s.hidden;
  c.feat = s.hidden;
  c.zdim = s.zdim;
  c.set_norm = s.set_norm;
  return c;
}

GnnCfg enc_gnn_cfg(const ModelSpec& s) {
  GnnCfg c;
  c.fs = s.fs;
  c.fv = s.fv;
  c.layers = s.gnn_layers;
  c.dim = s.task == Task::So2PointSet ? 2 : 3;
  c.translation = s.task == Task::Se3PointCloud;
  c.cutoff = s.cutoff;
  return c;
}

GnnCfg dec_gnn_cfg(const ModelSpec& s) {
  GnnCfg c = enc_gnn_cfg(s);
  c.translation = false;  // the decoder never models the t channel
  return c;
}

}  // namespace

ModelState init_model(const ModelSpec& spec) {
  spec.validate();
  ModelState st;
  st.spec = spec;
  Rng rng(spec.seed);
  ParamStore& ps = st.params;
  // the message updates are bilinear in h, so the embeddings entering and
  // leaving the GNNs start small to keep activations in a sane range
  auto scale_param = [&ps](const std::string& name, double f) {
    const Tensor& t = ps.get(name);
    std::vector<double> v(t.data().begin(), t.data().end());
    for (double& x : v) x *= f;
    ps.set(name, Tensor(t.shape(), std::move(v)));
  };
  switch (spec.task) {
    case Task::DigitSets: {
      init_set_encoder(ps, "enc", spec.set_d, set_encoder_cfg(spec), rng);
      init_symmetry_break(ps, "dec.sb", spec.zdim, spec.hidden, spec.set_n, 1, rng, /*with_start=*/false);
      init_mlp(ps, "dec.mlp", spec.hidden, spec.hidden, spec.set_d, spec.dec_layers, rng);
      break;
    }
    case Task::DigitSetsBaseline: {
      // matched widths and layer counts, no group structure anywhere
      init_mlp(ps, "enc.mlp", spec.set_n * spec.set_d, spec.hidden, spec.zdim,
               spec.gamma_layers + spec.beta_layers, rng);
      init_mlp(ps, "dec.mlp", spec.zdim, spec.hidden, spec.set_n * spec.set_d, spec.dec_layers + 1, rng);
      break;
    }
    case Task::Se3PointCloud: {
      const GnnCfg cfg = enc_gnn_cfg(spec);
      init_gnn(ps, "enc.gnn", cfg, rng, NodeFeatureInit::SharedVector);
      init_dense(ps, "enc.hproj", spec.fs, spec.zdim, rng);
      init_dense(ps, "enc.score", spec.fs, 1, rng);
      ps.create("enc.wproj", xavier_init(spec.fv, 2, rng));
      init_symmetry_break(ps, "dec.sb", spec.zdim, spec.fs, spec.cloud_n, 3, rng);
      init_gnn(ps, "dec.gnn", dec_gnn_cfg(spec), rng, NodeFeatureInit::External);
      ps.create("dec.out", xavier_init(spec.fv, 1, rng));
      scale_param("enc.hproj.w", 0.1);
      scale_param("dec.sb.proj.w", 0.1);
      break;
    }
    case Task::So2PointSet: {
      const GnnCfg cfg = enc_gnn_cfg(spec);
      init_gnn(ps, "enc.gnn", cfg, rng, NodeFeatureInit::IndexOneHot);
      init_dense(ps, "enc.hproj", spec.fs, spec.zdim, rng);
      ps.create("enc.wproj", xavier_init(spec.fv, 1, rng));
      init_symmetry_break(ps, "dec.sb", spec.zdim, spec.fs, spec.cloud_n, 2, rng);
      init_gnn(ps, "dec.gnn", dec_gnn_cfg(spec), rng, NodeFeatureInit::External);
      ps.create("dec.out", xavier_init(spec.fv, 1, rng));
      scale_param("enc.hproj.w", 0.1);
      scale_param("dec.sb.proj.w", 0.1);
      break;
    }
  }
  return st;
}

// ---------------------------------------------------------------------------
// Forward

namespace {

void require_kind(const ModelSpec& spec, const Sample& sample) {
  const bool want_cloud = spec.task == Task::Se3PointCloud || spec.task == Task::So2PointSet;
  if (want_cloud && sample.kind != Sample::Kind::PointCloud)
    throw std::invalid_argument("task expects point clouds");
  if (!want_cloud && sample.kind != Sample::Kind::DigitSet)
    throw std::invalid_argument("task expects digit sets");
  if (want_cloud) {
    const int dim = spec.task == Task::So2PointSet ? 2 : 3;
    if (sample.cloud.positions.rows() != spec.cloud_n || sample.cloud.positions.cols() != dim)
      throw std::invalid_argument("cloud shape " + shape_str(sample.cloud.positions.shape()) +
                                  " does not match spec");
  } else {
    if (sample.digits.rows.rows() != spec.set_n || sample.digits.rows.cols() != spec.set_d)
      throw std::invalid_argument("digit set shape " + shape_str(sample.digits.rows.shape()) +
                                  " does not match spec");
  }
}

}  // namespace

namespace {

MuOut core_encode(const Ctx& ctx, const ModelSpec& spec, const Sample& sample) {
  require_kind(spec, sample);
  MuOut m;
  switch (spec.task) {
    case Task::DigitSets: {
      const SetEncoding enc = set_encode(ctx, "enc", sample.digits.rows, set_encoder_cfg(spec));
      m.z = enc.z;
      m.scores = enc.scores;
      break;
    }
    case Task::DigitSetsBaseline: {
      Tensor flat = reshape(sample.digits.rows, {1, spec.set_n * spec.set_d});
      Tensor z = mlp(ctx, "enc.mlp", flat, spec.gamma_layers + spec.beta_layers, Act::Relu, Act::None);
      m.z = reshape(z, {spec.zdim});
      break;
    }
    case Task::Se3PointCloud: {
      const GnnCfg cfg = enc_gnn_cfg(spec);
      NodeState st = init_node_state(ctx, "enc.gnn", sample.cloud.positions, cfg, NodeFeatureInit::SharedVector);
      st = run_gnn(ctx, "enc.gnn", st, cfg);
      const int n = spec.cloud_n;
      // canonical row order keeps the node averages bitwise
      // permutation-invariant
      const auto order = canonical_row_order(st.h);
      Tensor H = dense(ctx, "enc.hproj", st.h);
      m.z = reduce(Reduce::Mean, gather_rows(H, order), 0);
      m.scores = reshape(dense(ctx, "enc.score", st.h), {n});
      Tensor wproj = ctx.p("enc.wproj");
      Tensor wsum = matmul(st.w[static_cast<std::size_t>(order[0])], wproj);
      for (int i = 1; i < n; ++i)
        wsum = add(wsum, matmul(st.w[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])], wproj));
      m.wbar = div(wsum, static_cast<double>(n));
      m.tbar = reshape(reduce(Reduce::Mean, gather_rows(st.t, order), 0), {1, 3});
      break;
    }
    case Task::So2PointSet: {
      const GnnCfg cfg = enc_gnn_cfg(spec);
      NodeState st = init_node_state(ctx, "enc.gnn", sample.cloud.positions, cfg, NodeFeatureInit::IndexOneHot);
      st = run_gnn(ctx, "enc.gnn", st, cfg);
      const int n = spec.cloud_n;
      Tensor H = dense(ctx, "enc.hproj", st.h);
      m.z = reduce(Reduce::Mean, H, 0);
      Tensor wproj = ctx.p("enc.wproj");
      Tensor wsum = matmul(st.w[0], wproj);
      for (int i = 1; i < n; ++i) wsum = add(wsum, matmul(st.w[static_cast<std::size_t>(i)], wproj));
      m.wbar = div(wsum, static_cast<double>(n));
      break;
    }
  }
  return m;
}

}  // namespace

MuOut mu_outputs(const ModelState& state, const Sample& sample) {
  const Ctx ctx{state.params, nullptr};
  return core_encode(ctx, state.spec, sample);
}

Forward forward_encode(const Ctx& ctx, const ModelSpec& spec, const Sample& sample, double tau) {
  const MuOut core = core_encode(ctx, spec, sample);
  Forward f;
  f.z = core.z;
  f.scores = core.scores;
  switch (spec.task) {
    case Task::DigitSets:
      f.perm_relaxed = softsort(core.scores, tau);
      break;
    case Task::DigitSetsBaseline:
      break;
    case Task::Se3PointCloud:
      f.perm_relaxed = softsort(core.scores, tau);
      f.rot = frame_so3(core.wbar);
      f.trans = core.tbar;
      break;
    case Task::So2PointSet:
      f.rot = frame_so2(reshape(core.wbar, {1, 2}));
      break;
  }
  return f;
}

namespace {

Tensor decode_canonical(const Ctx& ctx, const ModelSpec& spec, const Tensor& z) {
  switch (spec.task) {
    case Task::DigitSets: {
      Tensor slots = positional_symmetry_break(ctx, "dec.sb", z, spec.set_n, spec.hidden);
      return mlp(ctx, "dec.mlp", slots, spec.dec_layers, Act::Relu, Act::None);
    }
    case Task::DigitSetsBaseline: {
      Tensor out = mlp(ctx, "dec.mlp", reshape(z, {1, spec.zdim}), spec.dec_layers + 1, Act::Relu, Act::None);
      return reshape(out, {spec.set_n, spec.set_d});
    }
    case Task::Se3PointCloud:
    case Task::So2PointSet: {
      const GnnCfg cfg = dec_gnn_cfg(spec);
      const int n = spec.cloud_n;
      NodeState st;
      st.h = positional_symmetry_break(ctx, "dec.sb", z, n, spec.fs);
      st.w.assign(static_cast<std::size_t>(n), Tensor::zeros({cfg.dim, spec.fv}));
      st.positions = ctx.p("dec.sb.start");
      st = run_gnn(ctx, "dec.gnn", st, cfg);
      Tensor out_map = ctx.p("dec.out");
      std::vector<Tensor> rows;
      rows.reserve(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i)
        rows.push_back(transpose(matmul(st.w[static_cast<std::size_t>(i)], out_map)));
      return add(st.positions, concat_rows(rows));
    }
  }
  throw std::logic_error("decode_canonical: bad task");
}

}  // namespace

Tensor sample_loss(const Ctx& ctx, const ModelSpec& spec, const Sample& sample) {
  const Forward f = forward_encode(ctx, spec, sample, spec.tau);
  Tensor canonical = decode_canonical(ctx, spec, f.z);
  switch (spec.task) {
    case Task::DigitSets: {
      Tensor aligned = matmul(transpose(f.perm_relaxed), canonical);
      return cross_entropy_rows(aligned, sample.digits.rows);
    }
    case Task::DigitSetsBaseline:
      return cross_entropy_rows(canonical, sample.digits.rows);
    case Task::Se3PointCloud: {
      Tensor rotated = matmul(canonical, transpose(f.rot));
      Tensor permuted = matmul(transpose(f.perm_relaxed), rotated);
      Tensor aligned = add(permuted, f.trans);
      return mse_loss(aligned, sample.cloud.positions);
    }
    case Task::So2PointSet: {
      Tensor aligned = matmul(canonical, transpose(f.rot));
      return mse_loss(aligned, sample.cloud.positions);
    }
  }
  throw std::logic_error("sample_loss: bad task");
}

// ---------------------------------------------------------------------------
// encode / decode with group elements

namespace {

Sample jitter_sample(const Sample& s) {
  if (s.kind != Sample::Kind::PointCloud) return s;
  Rng jr(0x6a697474ULL);  // fixed pattern so retries are reproducible
  Sample out = s;
  std::vector<double> p(s.cloud.positions.data().begin(), s.cloud.positions.data().end());
  for (double& v : p) v += 1e-8 * jr.normal();
  out.cloud.positions = Tensor(s.cloud.positions.shape(), std::move(p));
  return out;
}

Mat3 mat3_of(const Tensor& t) {
  Mat3 m{};
  for (int i = 0; i < 9; ++i) m[static_cast<std::size_t>(i)] = t.at(i);
  return m;
}

std::vector<double> vec_of(const Tensor& t) {
  return std::vector<double>(t.data().begin(), t.data().end());
}

EncodeOut encode_impl(const ModelState& state, const Sample& sample) {
  const Ctx ctx{state.params, nullptr};
  const ModelSpec& spec = state.spec;
  const Forward f = forward_encode(ctx, spec, sample, spec.eval_tau);
  EncodeOut out;
  out.z = f.z;
  switch (spec.task) {
    case Task::DigitSets:
      out.g = xi_perm(vec_of(f.scores));
      break;
    case Task::DigitSetsBaseline: {
      std::vector<int> id(static_cast<std::size_t>(spec.set_n));
      for (int i = 0; i < spec.set_n; ++i) id[static_cast<std::size_t>(i)] = i;
      out.g = GroupElement::perm(std::move(id));
      break;
    }
    case Task::Se3PointCloud: {
      const Vec3 t{f.trans.at(0), f.trans.at(1), f.trans.at(2)};
      out.g = GroupElement::se3(mat3_of(f.rot), t);
      out.perm = xi_perm(vec_of(f.scores));
      break;
    }
    case Task::So2PointSet:
      out.g = GroupElement::rot2({f.rot.at(0), f.rot.at(1), f.rot.at(2), f.rot.at(3)});
      break;
  }
  return out;
}

}  // namespace

EncodeOut encode(const ModelState& state, const Sample& sample) {
  try {
    return encode_impl(state, sample);
  } catch (const DegenerateFrame&) {
  } catch (const DegenerateInput&) {
  }
  return encode_impl(state, jitter_sample(sample));
}

DecodeOut decode(const ModelState& state, const Tensor& z, const GroupElement& g,
                 const std::optional<GroupElement>& perm) {
  const Ctx ctx{state.params, nullptr};
  DecodeOut out;
  out.canonical = decode_canonical(ctx, state.spec, z);
  Tensor aligned = apply(g, out.canonical);
  if (perm) aligned = apply(*perm, aligned);
  out.aligned = aligned;
  return out;
}

double loss_value(const ModelState& state, const Sample& sample) {
  const Ctx ctx{state.params, nullptr};
  try {
    return sample_loss(ctx, state.spec, sample).item();
  } catch (const DegenerateFrame&) {
  } catch (const DegenerateInput&) {
  }
  return sample_loss(ctx, state.spec, jitter_sample(sample)).item();
}

// ---------------------------------------------------------------------------
// Task group elements

TaskElement random_task_element(const ModelSpec& spec, Rng& rng) {
  TaskElement e;
  switch (spec.task) {
    case Task::DigitSets:
    case Task::DigitSetsBaseline:
      e.perm = random_element(GroupTag::Perm, spec.set_n, rng);
      break;
    case Task::Se3PointCloud:
      e.spatial = random_element(GroupTag::SE3, 3, rng);
      e.perm = random_element(GroupTag::Perm, spec.cloud_n, rng);
      break;
    case Task::So2PointSet:
      e.spatial = random_element(GroupTag::SO2, 2, rng);
      break;
  }
  return e;
}

Sample apply_task_element(const TaskElement& g, const Sample& sample) {
  Sample out = sample;
  if (sample.kind == Sample::Kind::DigitSet) {
    if (g.perm) out.digits.rows = apply(*g.perm, sample.digits.rows);
    return out;
  }
  Tensor pos = sample.cloud.positions;
  if (g.spatial) pos = apply(*g.spatial, pos);
  if (g.perm) {
    pos = apply(*g.perm, pos);
    if (out.cloud.features) out.cloud.features = apply(*g.perm, *out.cloud.features);
  }
  out.cloud.positions = pos;
  return out;
}

// ---------------------------------------------------------------------------
// Training

namespace {

struct StepOut {
  Gradients grads;
  double loss = 0;
  bool ok = false;
};

StepOut grad_sample(const ParamStore& params, const ModelSpec& spec, const Sample& sample) {
  auto run = [&](const Sample& x) {
    Tape tape;
    TapeScope scope(tape);
    const Ctx ctx{params, &tape};
    Tensor loss = sample_loss(ctx, spec, x);
    StepOut o;
    o.loss = loss.item();
    o.grads = tape.backward(loss);
    o.ok = true;
    return o;
  };
  try {
    return run(sample);
  } catch (const DegenerateFrame&) {
  } catch (const DegenerateInput&) {
  }
  try {
    return run(jitter_sample(sample));
  } catch (const DegenerateFrame&) {
  } catch (const DegenerateInput&) {
  }
  return {};
}

// returns false if any updated parameter went non-finite
bool adam_step(ModelState& st, const Gradients& grads, double lr) {
  ++st.step;
  const ModelSpec& s = st.spec;
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(st.step));
  bool finite = true;
  for (const auto& name : st.params.names()) {
    const Tensor& p = st.params.get(name);
    if (!grads.has(p)) continue;
    const auto& g = grads.raw(p);
    auto& m = st.adam_m[name];
    auto& v = st.adam_v[name];
    if (m.empty()) m.assign(g.size(), 0.0);
    if (v.empty()) v.assign(g.size(), 0.0);
    std::vector<double> np(p.data().begin(), p.data().end());
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g[i];
      v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g[i] * g[i];
      const double mh = m[i] / bc1;
      const double vh = v[i] / bc2;
      np[i] -= lr * mh / (std::sqrt(vh) + s.adam_eps);
      if (!std::isfinite(np[i])) finite = false;
    }
    st.params.set(name, Tensor(p.shape(), std::move(np)));
  }
  return finite;
}

double chirality_margin(const std::vector<std::vector<double>>& za, const std::vector<std::vector<double>>& zb) {
  if (za.empty() || zb.empty()) return 0.0;
  const std::size_t d = za[0].size();
  std::vector<double> ca(d, 0.0), cb(d, 0.0);
  for (const auto& z : za)
    for (std::size_t i = 0; i < d; ++i) ca[i] += z[i] / static_cast<double>(za.size());
  for (const auto& z : zb)
    for (std::size_t i = 0; i < d; ++i) cb[i] += z[i] / static_cast<double>(zb.size());
  double between = 0.0;
  for (std::size_t i = 0; i < d; ++i) between += (ca[i] - cb[i]) * (ca[i] - cb[i]);
  between = std::sqrt(between);
  auto spread = [&](const std::vector<std::vector<double>>& zs, const std::vector<double>& c) {
    double s = 0.0;
    for (const auto& z : zs) {
      double r = 0.0;
      for (std::size_t i = 0; i < d; ++i) r += (z[i] - c[i]) * (z[i] - c[i]);
      s += std::sqrt(r);
    }
    return s / static_cast<double>(zs.size());
  };
  const double within = 0.5 * (spread(za, ca) + spread(zb, cb));
  if (within < 1e-12) return between > 1e-12 ? 1e9 : 0.0;
  return between / within;
}

}  // namespace

EvalMetrics evaluate(const ModelState& state, const Dataset& ds, int group_draws, std::uint64_t seed) {
  const ModelSpec& spec = state.spec;
  EvalMetrics m;
  m.samples = static_cast<int>(ds.size());
  Rng rng(seed);
  const bool digit = spec.task == Task::DigitSets || spec.task == Task::DigitSetsBaseline;
  double err_sum = 0.0;
  long long elem_total = 0, elem_correct = 0;
  std::vector<std::vector<double>> z0, z1;

  for (const Sample& s : ds) {
    const EncodeOut enc = encode(state, s);
    const DecodeOut dec = decode(state, enc.z, enc.g, enc.perm);
    if (digit) {
      for (int i = 0; i < spec.set_n; ++i) {
        int pred = 0, truth = 0;
        for (int c = 1; c < spec.set_d; ++c) {
          if (dec.aligned.at(i, c) > dec.aligned.at(i, pred)) pred = c;
          if (s.digits.rows.at(i, c) > s.digits.rows.at(i, truth)) truth = c;
        }
        elem_total += 1;
        elem_correct += pred == truth ? 1 : 0;
      }
    } else {
      double e = 0.0;
      const Tensor& x = s.cloud.positions;
      for (int i = 0; i < x.size(); ++i) {
        const double d = dec.aligned.at(i) - x.at(i);
        e += d * d;
      }
      err_sum += e / x.size();
      if (s.cloud.label && (*s.cloud.label == 0 || *s.cloud.label == 1)) {
        auto& bucket = *s.cloud.label == 0 ? z0 : z1;
        bucket.push_back(vec_of(enc.z));
      }
    }

    for (int d = 0; d < group_draws; ++d) {
      const TaskElement g = random_task_element(spec, rng);
      const Sample gs = apply_task_element(g, s);
      const EncodeOut enc2 = encode(state, gs);
      for (int i = 0; i < enc.z.size(); ++i)
        m.inv_gap = std::max(m.inv_gap, std::fabs(enc2.z.at(i) - enc.z.at(i)));

      // stabilizer-residual action error of the learned psi
      if (spec.task == Task::Se3PointCloud || spec.task == Task::So2PointSet) {
        const GroupElement residual =
            compose(inverse(enc2.g), compose(*g.spatial, enc.g));
        const Tensor rx = apply(residual, s.cloud.positions);
        m.equi_gap = std::max(m.equi_gap, point_set_distance(rx, s.cloud.positions));
      } else if (spec.task == Task::DigitSets) {
        const GroupElement residual = compose(inverse(enc2.g), compose(*g.perm, enc.g));
        const Tensor rx = apply(residual, s.digits.rows);
        double diff = 0.0;
        for (int i = 0; i < rx.size(); ++i) diff = std::max(diff, std::fabs(rx.at(i) - s.digits.rows.at(i)));
        m.equi_gap = std::max(m.equi_gap, diff);
      }
    }
  }

  if (digit) {
    m.accuracy = elem_total ? static_cast<double>(elem_correct) / static_cast<double>(elem_total) : 0.0;
  } else {
    m.mse = ds.empty() ? 0.0 : err_sum / static_cast<double>(ds.size());
    m.chirality = chirality_margin(z0, z1);
  }
  return m;
}

TrainResult train_continue(ModelState state, const Dataset& ds, int epochs, int workers) {
  const ModelSpec spec = state.spec;
  spec.validate();
  if (ds.empty()) throw std::invalid_argument("train: empty dataset");
  for (const Sample& s : ds) require_kind(spec, s);

  const int n = static_cast<int>(ds.size());
  const int steps_per_epoch = (n + spec.batch - 1) / spec.batch;
  const int start_epoch = static_cast<int>(state.step / steps_per_epoch);
  const bool digit = spec.task == Task::DigitSets || spec.task == Task::DigitSetsBaseline;

  TrainResult res;
  res.state = std::move(state);
  ModelState snapshot = res.state;

  for (int e = start_epoch; e < start_epoch + epochs; ++e) {
    Rng order_rng(spec.seed * 0x9E3779B97F4A7C15ULL + static_cast<std::uint64_t>(e) + 1);
    const auto order = order_rng.permutation(n);
    double loss_sum = 0.0;
    long long loss_cnt = 0;

    // per-epoch schedules: softsort temperature anneal and lr decay
    ModelSpec epoch_spec = spec;
    epoch_spec.tau = std::max(spec.tau_min, spec.tau * std::pow(spec.tau_decay, static_cast<double>(e)));
    epoch_spec.lr = std::max(spec.lr_min, spec.lr * std::pow(spec.lr_decay, static_cast<double>(e)));

    for (int s0 = 0; s0 < n; s0 += spec.batch) {
      const int bs = std::min(spec.batch, n - s0);
      std::vector<StepOut> outs(static_cast<std::size_t>(bs));
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic) num_threads(workers) if (workers > 1)
#endif
      for (int b = 0; b < bs; ++b)
        outs[static_cast<std::size_t>(b)] =
            grad_sample(res.state.params, epoch_spec,
                        ds[static_cast<std::size_t>(order[static_cast<std::size_t>(s0 + b)])]);

      Gradients total;
      int ok = 0;
      double batch_loss = 0.0;
      for (const StepOut& o : outs) {
        if (!o.ok) continue;
        total.accumulate(o.grads);
        batch_loss += o.loss;
        ++ok;
      }
      if (ok == 0) continue;
      total.scale(1.0 / ok);
      if (spec.grad_clip > 0.0) {
        const double norm = total.l2_norm();
        if (norm > spec.grad_clip) total.scale(spec.grad_clip / norm);
      }
      batch_loss /= ok;
      loss_sum += batch_loss;
      ++loss_cnt;
      if (!std::isfinite(batch_loss) || batch_loss > 1e30) {
        res.state = snapshot;
        res.aborted = true;
        res.abort_reason = "diverged (loss " + std::to_string(batch_loss) + ") at step " +
                           std::to_string(res.state.step);
        return res;
      }
      if (!adam_step(res.state, total, epoch_spec.lr)) {
        res.state = snapshot;
        res.aborted = true;
        res.abort_reason = "non-finite parameter at step " + std::to_string(res.state.step);
        return res;
      }
    }

    // epoch metrics on a fixed probe subset
    const int probe_n = std::min(128, n);
    Dataset probe(ds.begin(), ds.begin() + probe_n);
    const EvalMetrics em = evaluate(res.state, probe, 2, spec.seed ^ (0xABCDULL + static_cast<std::uint64_t>(e)));
    MetricsRow row;
    row.epoch = e;
    row.loss = loss_cnt ? loss_sum / static_cast<double>(loss_cnt) : 0.0;
    row.inv_gap = em.inv_gap;
    row.acc_or_mse = digit ? em.accuracy : em.mse;
    row.chirality = em.chirality;
    res.log.push_back(row);
    snapshot = res.state;

    if (spec.target_metric > 0.0) {
      if (digit && row.acc_or_mse >= spec.target_metric) break;
      if (!digit && row.acc_or_mse <= spec.target_metric) break;
    }
  }
  return res;
}

TrainResult train(const ModelSpec& spec, const Dataset& ds, int workers) {
  return train_continue(init_model(spec), ds, spec.epochs, workers);
}

std::vector<SampleReport> per_sample_report(const ModelState& state, const Dataset& ds) {
  std::vector<SampleReport> out;
  out.reserve(ds.size());
  const ModelSpec& spec = state.spec;
  const bool digit = spec.task == Task::DigitSets || spec.task == Task::DigitSetsBaseline;
  for (const Sample& s : ds) {
    const EncodeOut enc = encode(state, s);
    const DecodeOut dec = decode(state, enc.z, enc.g, enc.perm);
    SampleReport r;
    r.z = vec_of(enc.z);
    json g = json::parse(enc.g.to_json());
    json full;
    full["g"] = g;
    if (enc.perm) full["perm"] = json::parse(enc.perm->to_json());
    r.g_json = full.dump();
    if (digit) {
      int wrong = 0;
      for (int i = 0; i < spec.set_n; ++i) {
        int pred = 0, truth = 0;
        for (int c = 1; c < spec.set_d; ++c) {
          if (dec.aligned.at(i, c) > dec.aligned.at(i, pred)) pred = c;
          if (s.digits.rows.at(i, c) > s.digits.rows.at(i, truth)) truth = c;
        }
        wrong += pred == truth ? 0 : 1;
      }
      r.recon_error = static_cast<double>(wrong) / spec.set_n;
    } else {
      double e = 0.0;
      for (int i = 0; i < s.cloud.positions.size(); ++i) {
        const double d = dec.aligned.at(i) - s.cloud.positions.at(i);
        e += d * d;
      }
      r.recon_error = e / s.cloud.positions.size();
      if (s.cloud.label) r.label = *s.cloud.label;
    }
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint serialization

std::string ModelState::to_json() const {
  json j;
  j["format"] = kModelFormat;
  j["spec"] = json::parse(spec.to_json());
  j["params"] = json::parse(params.to_json());
  j["adam_m"] = adam_m;
  j["adam_v"] = adam_v;
  j["step"] = step;
  return j.dump();
}

ModelState ModelState::from_json(const std::string& text) {
  const json j = json::parse(text);
  if (j.at("format").get<std::string>() != kModelFormat)
    throw std::runtime_error("unsupported checkpoint format");
  ModelState st;
  st.spec = ModelSpec::from_json(j.at("spec").dump());
  st.params = ParamStore::from_json(j.at("params").dump());
  st.adam_m = j.at("adam_m").get<std::unordered_map<std::string, std::vector<double>>>();
  st.adam_v = j.at("adam_v").get<std::unordered_map<std::string, std::vector<double>>>();
  st.step = j.at("step").get<long long>();
  return st;
}

}  // namespace canonae
