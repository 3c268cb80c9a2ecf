#include "canonae/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "canonae/kernels.hpp"

namespace canonae {

namespace {

thread_local Tape* g_active_tape = nullptr;

[[noreturn]] void shape_error(const std::string& op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(op + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

std::shared_ptr<const std::vector<double>> share(std::vector<double> v) {
  return std::make_shared<const std::vector<double>>(std::move(v));
}

int node_on(const Tensor& t, const Tape* tape) {
  if (!t.tracked()) return -1;
  if (t.origin() != tape)
    throw std::logic_error("tensor was recorded on a different tape");
  return t.node();
}

bool any_tracked(std::initializer_list<const Tensor*> ts) {
  for (const Tensor* t : ts)
    if (t->tracked()) return true;
  return false;
}

// Right-aligned broadcast shape of a and b; throws if incompatible.
Shape broadcast_shape(const std::string& op, const Shape& a, const Shape& b) {
  const int ra = static_cast<int>(a.size());
  const int rb = static_cast<int>(b.size());
  const int r = std::max(ra, rb);
  Shape out(static_cast<std::size_t>(r));
  for (int d = 0; d < r; ++d) {
    const int da = d < r - ra ? 1 : a[static_cast<std::size_t>(d - (r - ra))];
    const int db = d < r - rb ? 1 : b[static_cast<std::size_t>(d - (r - rb))];
    if (da != db && da != 1 && db != 1) shape_error(op, a, b);
    out[static_cast<std::size_t>(d)] = std::max(da, db);
  }
  return out;
}

// Strides of `in` viewed inside `out` (right-aligned; 0 on broadcast dims).
std::vector<long long> broadcast_strides(const Shape& out, const Shape& in) {
  const int r = static_cast<int>(out.size());
  const int ri = static_cast<int>(in.size());
  std::vector<long long> natural(static_cast<std::size_t>(ri));
  long long acc = 1;
  for (int d = ri - 1; d >= 0; --d) {
    natural[static_cast<std::size_t>(d)] = acc;
    acc *= in[static_cast<std::size_t>(d)];
  }
  std::vector<long long> s(static_cast<std::size_t>(r), 0);
  for (int d = 0; d < ri; ++d) {
    const int od = d + (r - ri);
    if (in[static_cast<std::size_t>(d)] != 1)
      s[static_cast<std::size_t>(od)] = natural[static_cast<std::size_t>(d)];
  }
  return s;
}

// Maps every linear index of `out` to a linear index of `in`.
std::vector<long long> broadcast_index_map(const Shape& out, const Shape& in) {
  const long long n = shape_size(out);
  const auto strides = broadcast_strides(out, in);
  const int r = static_cast<int>(out.size());
  std::vector<long long> idx(static_cast<std::size_t>(n));
  std::vector<int> coord(static_cast<std::size_t>(r), 0);
  long long off = 0;
  for (long long i = 0; i < n; ++i) {
    idx[static_cast<std::size_t>(i)] = off;
    for (int d = r - 1; d >= 0; --d) {
      auto& c = coord[static_cast<std::size_t>(d)];
      off += strides[static_cast<std::size_t>(d)];
      if (++c < out[static_cast<std::size_t>(d)]) break;
      off -= static_cast<long long>(c) * strides[static_cast<std::size_t>(d)];
      c = 0;
    }
  }
  return idx;
}

double apply_bin(kernels::Ew op, double x, double y) {
  switch (op) {
    case kernels::Ew::Add: return x + y;
    case kernels::Ew::Sub: return x - y;
    case kernels::Ew::Mul: return x * y;
    default: return x / y;
  }
}

}  // namespace

int shape_size(const Shape& s) {
  long long n = 1;
  for (int d : s) n *= d;
  return static_cast<int>(n);
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)) {
  long long n = 1;
  for (int d : shape_) {
    if (d <= 0) throw std::invalid_argument("tensor dims must be positive, got " + shape_str(shape_));
    n *= d;
  }
  if (n != static_cast<long long>(data.size()))
    throw std::invalid_argument("tensor data size " + std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape_));
  data_ = share(std::move(data));
}

Tensor Tensor::zeros(Shape shape) {
  std::vector<double> d(static_cast<std::size_t>(shape_size(shape)), 0.0);
  return Tensor(std::move(shape), std::move(d));
}

Tensor Tensor::full(Shape shape, double value) {
  std::vector<double> d(static_cast<std::size_t>(shape_size(shape)), value);
  return Tensor(std::move(shape), std::move(d));
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{}, {value}); }

Tensor Tensor::vec(std::vector<double> data) {
  const int n = static_cast<int>(data.size());
  return Tensor(Shape{n}, std::move(data));
}

Tensor Tensor::matrix(int rows, int cols, std::vector<double> data) {
  return Tensor(Shape{rows, cols}, std::move(data));
}

Tensor Tensor::eye(int n) {
  std::vector<double> d(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) d[static_cast<std::size_t>(i) * n + i] = 1.0;
  return Tensor(Shape{n, n}, std::move(d));
}

int Tensor::size() const { return data_ ? static_cast<int>(data_->size()) : 0; }

int Tensor::rows() const {
  if (rank() != 2) throw std::logic_error("rows(): tensor is not rank-2, shape " + shape_str(shape_));
  return shape_[0];
}

int Tensor::cols() const {
  if (rank() != 2) throw std::logic_error("cols(): tensor is not rank-2, shape " + shape_str(shape_));
  return shape_[1];
}

double Tensor::item() const {
  if (size() != 1) throw std::logic_error("item(): tensor has " + std::to_string(size()) + " elements");
  return (*data_)[0];
}

Tensor Tensor::detached() const {
  Tensor t = *this;
  t.node_ = -1;
  t.origin_ = nullptr;
  return t;
}

// ---------------------------------------------------------------------------
// Tape

Tape* Tape::active() { return g_active_tape; }

TapeScope::TapeScope(Tape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = prev_; }

Tensor Tape::watch(const Tensor& param) {
  if (param.empty()) throw std::invalid_argument("watch: empty tensor");
  const void* key = static_cast<const void*>(param.data_->data());
  auto it = leaf_node_.find(key);
  int id;
  if (it != leaf_node_.end()) {
    id = it->second;
  } else {
    id = static_cast<int>(nodes_.size());
    nodes_.push_back(Node{{}, {}, param.size()});
    leaf_node_.emplace(key, id);
    leaves_.emplace_back(key, param.shape());
  }
  Tensor t = param;
  t.node_ = id;
  t.origin_ = this;
  return t;
}

Tensor Tape::emit(Tensor value, std::vector<int> parents, BackwardFn back) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{std::move(parents), std::move(back), value.size()});
  value.node_ = id;
  value.origin_ = this;
  return value;
}

Gradients Tape::backward(const Tensor& loss) const {
  if (!loss.tracked() || loss.origin_ != this)
    throw std::invalid_argument("backward: loss is not tracked on this tape");
  if (loss.size() != 1)
    throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(loss.shape()));

  std::vector<std::vector<double>> slots(nodes_.size());
  slots[static_cast<std::size_t>(loss.node_)] = {1.0};
  Sink sink{slots};
  for (int i = loss.node_; i >= 0; --i) {
    const auto& node = nodes_[static_cast<std::size_t>(i)];
    auto& g = slots[static_cast<std::size_t>(i)];
    if (g.empty() || !node.back) continue;
    node.back(g, sink);
  }

  Gradients out;
  for (const auto& [key, shape] : leaves_) {
    const int id = leaf_node_.at(key);
    auto& slot = slots[static_cast<std::size_t>(id)];
    Gradients::Entry e;
    e.shape = shape;
    if (slot.empty())
      e.g.assign(static_cast<std::size_t>(shape_size(shape)), 0.0);
    else
      e.g = slot;
    out.entries_.emplace(key, std::move(e));
  }
  return out;
}

bool Gradients::has(const Tensor& param) const {
  return entries_.count(static_cast<const void*>(param.data().data())) > 0;
}

const std::vector<double>& Gradients::raw(const Tensor& param) const {
  auto it = entries_.find(reinterpret_cast<const void*>(param.data().data()));
  if (it == entries_.end()) throw std::out_of_range("gradients: parameter was not watched");
  return it->second.g;
}

Tensor Gradients::grad(const Tensor& param) const {
  auto it = entries_.find(reinterpret_cast<const void*>(param.data().data()));
  if (it == entries_.end()) throw std::out_of_range("gradients: parameter was not watched");
  return Tensor(it->second.shape, it->second.g);
}

void Gradients::accumulate(const Gradients& other) {
  for (const auto& [key, entry] : other.entries_) {
    auto it = entries_.find(key);
    if (it == entries_.end()) {
      entries_.emplace(key, entry);
    } else {
      auto& g = it->second.g;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += entry.g[i];
    }
  }
}

void Gradients::scale(double factor) {
  for (auto& [key, entry] : entries_)
    for (double& v : entry.g) v *= factor;
}

double Gradients::l2_norm() const {
  double s = 0.0;
  for (const auto& [key, entry] : entries_)
    for (double v : entry.g) s += v * v;
  return std::sqrt(s);
}

// ---------------------------------------------------------------------------
// Elementwise with broadcasting

namespace {

// Sums `g` (laid out over `out`) into the shape of `in`, honoring broadcast.
void reduce_grad_into(const std::vector<double>& g, const Shape& out, const Shape& in,
                      std::vector<double>& acc) {
  if (out == in) {
    for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
    return;
  }
  const auto idx = broadcast_index_map(out, in);
  for (std::size_t i = 0; i < g.size(); ++i) acc[static_cast<std::size_t>(idx[i])] += g[i];
}

Tensor binary_op(const char* name, kernels::Ew op, const Tensor& a, const Tensor& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument(std::string(name) + ": empty operand");
  Shape out_shape = broadcast_shape(name, a.shape(), b.shape());
  const std::size_t n = static_cast<std::size_t>(shape_size(out_shape));
  std::vector<double> out(n);

  const bool same = a.shape() == b.shape();
  if (same) {
    kernels::ew(op, a.data().data(), b.data().data(), out.data(), n);
  } else {
    const auto ia = broadcast_index_map(out_shape, a.shape());
    const auto ib = broadcast_index_map(out_shape, b.shape());
    const auto* pa = a.data().data();
    const auto* pb = b.data().data();
    for (std::size_t i = 0; i < n; ++i)
      out[i] = apply_bin(op, pa[static_cast<std::size_t>(ia[i])], pb[static_cast<std::size_t>(ib[i])]);
  }

  Tensor r(out_shape, std::move(out));
  Tape* tape = Tape::active();
  if (!tape || !any_tracked({&a, &b})) return r;

  const int pa_node = node_on(a, tape);
  const int pb_node = node_on(b, tape);
  const Shape ash = a.shape(), bsh = b.shape(), osh = out_shape;
  const int asz = a.size(), bsz = b.size();
  auto adata = a.data();
  auto bdata = b.data();
  // keep storage alive for the closure
  Tensor acap = a.detached(), bcap = b.detached();

  Tape::BackwardFn back;
  switch (op) {
    case kernels::Ew::Add:
      back = [=](const std::vector<double>& dout, Tape::Sink& s) {
        if (pa_node >= 0) reduce_grad_into(dout, osh, ash, s.at(pa_node, asz));
        if (pb_node >= 0) reduce_grad_into(dout, osh, bsh, s.at(pb_node, bsz));
      };
      break;
    case kernels::Ew::Sub:
      back = [=](const std::vector<double>& dout, Tape::Sink& s) {
        if (pa_node >= 0) reduce_grad_into(dout, osh, ash, s.at(pa_node, asz));
        if (pb_node >= 0) {
          std::vector<double> nd(dout.size());
          for (std::size_t i = 0; i < dout.size(); ++i) nd[i] = -dout[i];
          reduce_grad_into(nd, osh, bsh, s.at(pb_node, bsz));
        }
      };
      break;
    case kernels::Ew::Mul:
      back = [=](const std::vector<double>& dout, Tape::Sink& s) {
        const auto* pa = acap.data().data();
        const auto* pb = bcap.data().data();
        const auto ia = broadcast_index_map(osh, ash);
        const auto ib = broadcast_index_map(osh, bsh);
        if (pa_node >= 0) {
          std::vector<double> d(dout.size());
          for (std::size_t i = 0; i < dout.size(); ++i) d[i] = dout[i] * pb[static_cast<std::size_t>(ib[i])];
          reduce_grad_into(d, osh, ash, s.at(pa_node, asz));
        }
        if (pb_node >= 0) {
          std::vector<double> d(dout.size());
          for (std::size_t i = 0; i < dout.size(); ++i) d[i] = dout[i] * pa[static_cast<std::size_t>(ia[i])];
          reduce_grad_into(d, osh, bsh, s.at(pb_node, bsz));
        }
      };
      break;
    case kernels::Ew::Div:
      back = [=](const std::vector<double>& dout, Tape::Sink& s) {
        const auto* pa = acap.data().data();
        const auto* pb = bcap.data().data();
        const auto ia = broadcast_index_map(osh, ash);
        const auto ib = broadcast_index_map(osh, bsh);
        if (pa_node >= 0) {
          std::vector<double> d(dout.size());
          for (std::size_t i = 0; i < dout.size(); ++i) d[i] = dout[i] / pb[static_cast<std::size_t>(ib[i])];
          reduce_grad_into(d, osh, ash, s.at(pa_node, asz));
        }
        if (pb_node >= 0) {
          std::vector<double> d(dout.size());
          for (std::size_t i = 0; i < dout.size(); ++i) {
            const double bv = pb[static_cast<std::size_t>(ib[i])];
            d[i] = -dout[i] * pa[static_cast<std::size_t>(ia[i])] / (bv * bv);
          }
          reduce_grad_into(d, osh, bsh, s.at(pb_node, bsz));
        }
      };
      break;
  }
  return tape->emit(std::move(r), {pa_node, pb_node}, std::move(back));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op("add", kernels::Ew::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op("sub", kernels::Ew::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op("mul", kernels::Ew::Mul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return binary_op("div", kernels::Ew::Div, a, b); }

Tensor add(const Tensor& a, double b) { return add(a, Tensor::scalar(b)); }
Tensor sub(const Tensor& a, double b) { return sub(a, Tensor::scalar(b)); }
Tensor sub(double a, const Tensor& b) { return sub(Tensor::scalar(a), b); }
Tensor mul(const Tensor& a, double b) { return mul(a, Tensor::scalar(b)); }
Tensor div(const Tensor& a, double b) { return div(a, Tensor::scalar(b)); }
Tensor neg(const Tensor& a) { return mul(a, -1.0); }

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
    shape_error("matmul", a.shape(), b.shape());
  const int m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  kernels::matmul(a.data().data(), b.data().data(), out.data(), m, k, n);

  Tensor r(Shape{m, n}, std::move(out));
  Tape* tape = Tape::active();
  if (!tape || !any_tracked({&a, &b})) return r;

  const int pa = node_on(a, tape), pb = node_on(b, tape);
  Tensor acap = a.detached(), bcap = b.detached();
  auto back = [=](const std::vector<double>& dout, Tape::Sink& s) {
    if (pa >= 0) {
      std::vector<double> da(static_cast<std::size_t>(m) * k);
      kernels::matmul_nt(dout.data(), bcap.data().data(), da.data(), m, n, k);
      auto& acc = s.at(pa, m * k);
      for (std::size_t i = 0; i < da.size(); ++i) acc[i] += da[i];
    }
    if (pb >= 0) {
      std::vector<double> db(static_cast<std::size_t>(k) * n);
      kernels::matmul_tn(acap.data().data(), dout.data(), db.data(), k, m, n);
      auto& acc = s.at(pb, k * n);
      for (std::size_t i = 0; i < db.size(); ++i) acc[i] += db[i];
    }
  };
  return tape->emit(std::move(r), {pa, pb}, std::move(back));
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw std::invalid_argument("transpose: rank-2 required, got " + shape_str(a.shape()));
  const int m = a.rows(), n = a.cols();
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  const auto* p = a.data().data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(j) * m + i] = p[static_cast<std::size_t>(i) * n + j];

  Tensor r(Shape{n, m}, std::move(out));
  Tape* tape = Tape::active();
  if (!tape || !a.tracked()) return r;
  const int pa = node_on(a, tape);
  auto back = [=](const std::vector<double>& dout, Tape::Sink& s) {
    auto& acc = s.at(pa, m * n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j)
        acc[static_cast<std::size_t>(j) * n + i] += dout[static_cast<std::size_t>(i) * m + j];
  };
  return tape->emit(std::move(r), {pa}, std::move(back));
}

Tensor outer(const Tensor& u, const Tensor& v) {
  if (u.rank() != 1 || v.rank() != 1) shape_error("outer", u.shape(), v.shape());
  const int m = u.shape()[0], n = v.shape()[0];
  return matmul(reshape(u, {m, 1}), reshape(v, {1, n}));
}

// ---------------------------------------------------------------------------
// Reductions

Tensor reduce(Reduce op, const Tensor& a, int axis) {
  if (a.empty()) throw std::invalid_argument("reduce: empty tensor");
  const int r = a.rank();
  if (axis < 0 || axis >= r)
    throw std::invalid_argument("reduce: axis " + std::to_string(axis) + " out of range for shape " +
                                shape_str(a.shape()));
  // view the tensor as [outer, len, inner] with the reduced axis in the middle
  int outer = 1, inner = 1;
  const int len = a.shape()[static_cast<std::size_t>(axis)];
  for (int d = 0; d < axis; ++d) outer *= a.shape()[static_cast<std::size_t>(d)];
  for (int d = axis + 1; d < r; ++d) inner *= a.shape()[static_cast<std::size_t>(d)];

  Shape out_shape;
  for (int d = 0; d < r; ++d)
    if (d != axis) out_shape.push_back(a.shape()[static_cast<std::size_t>(d)]);

  const std::size_t on = static_cast<std::size_t>(outer) * inner;
  std::vector<double> out(on);
  std::vector<int> argmax;
  const auto* p = a.data().data();

  if (op == Reduce::Max) argmax.assign(on, 0);
  for (int o = 0; o < outer; ++o) {
    for (int i = 0; i < inner; ++i) {
      const std::size_t base = static_cast<std::size_t>(o) * len * inner + i;
      const std::size_t oi = static_cast<std::size_t>(o) * inner + i;
      if (op == Reduce::Max) {
        double best = p[base];
        int bl = 0;
        for (int l = 1; l < len; ++l) {
          const double v = p[base + static_cast<std::size_t>(l) * inner];
          if (v > best) {
            best = v;
            bl = l;
          }
        }
        out[oi] = best;
        argmax[oi] = bl;
      } else {
        double s = 0.0;
        for (int l = 0; l < len; ++l) s += p[base + static_cast<std::size_t>(l) * inner];
        out[oi] = op == Reduce::Mean ? s / len : s;
      }
    }
  }

  Tensor res(out_shape, std::move(out));
  Tape* tape = Tape::active();
  if (!tape || !a.tracked()) return res;
  const int pa = node_on(a, tape);
  const int asz = a.size();
  auto back = [=](const std::vector<double>& dout, Tape::Sink& s) {
    auto& acc = s.at(pa, asz);
    for (int o = 0; o < outer; ++o) {
      for (int i = 0; i < inner; ++i) {
        const std::size_t base = static_cast<std::size_t>(o) * len * inner + i;
        const std::size_t oi = static_cast<std::size_t>(o) * inner + i;
        if (op == Reduce::Max) {
          acc[base + static_cast<std::size_t>(argmax[oi]) * inner] += dout[oi];
        } else {
          const double g = op == Reduce::Mean ? dout[oi] / len : dout[oi];
          for (int l = 0; l < len; ++l) acc[base + static_cast<std::size_t>(l) * inner] += g;
        }
      }
    }
  };
  return tape->emit(std::move(res), {pa}, std::move(back));
}

namespace {

Tensor reduce_all(const Tensor& a, bool mean) {
  if (a.empty()) throw std::invalid_argument("reduce: empty tensor");
  const auto* p = a.data().data();
  const int n = a.size();
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += p[i];
  if (mean) s /= n;

  Tensor r = Tensor::scalar(s);
  Tape* tape = Tape::active();
  if (!tape || !a.tracked()) return r;
  const int pa = node_on(a, tape);
  auto back = [=](const std::vector<double>& dout, Tape::Sink& sink) {
    const double g = mean ? dout[0] / n : dout[0];
    auto& acc = sink.at(pa, n);
    for (int i = 0; i < n; ++i) acc[static_cast<std::size_t>(i)] += g;
  };
  return tape->emit(std::move(r), {pa}, std::move(back));
}

}  // namespace

Tensor sum_all(const Tensor& a) { return reduce_all(a, false); }
Tensor mean_all(const Tensor& a) { return reduce_all(a, true); }

// ---------------------------------------------------------------------------
// Nonlinearities

Tensor unary(Unary op, const Tensor& a) {
  if (a.empty()) throw std::invalid_argument("unary: empty tensor");
  const int n = a.size();
  const auto* p = a.data().data();
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double x = p[i];
    switch (op) {
      case Unary::Relu: out[static_cast<std::size_t>(i)] = x > 0.0 ? x : 0.0; break;
      case Unary::Sigmoid: out[static_cast<std::size_t>(i)] = 1.0 / (1.0 + std::exp(-x)); break;
      case Unary::Tanh: out[static_cast<std::size_t>(i)] = std::tanh(x); break;
      case Unary::Exp: out[static_cast<std::size_t>(i)] = std::exp(x); break;
      case Unary::Log:
        if (x <= 0.0) throw std::domain_error("log requires positive entries, got " + std::to_string(x));
        out[static_cast<std::size_t>(i)] = std::log(x);
        break;
      case Unary::Sqrt:
        if (x <= 0.0) throw std::domain_error("sqrt requires positive entries, got " + std::to_string(x));
        out[static_cast<std::size_t>(i)] = std::sqrt(x);
        break;
      case Unary::Abs: out[static_cast<std::size_t>(i)] = std::fabs(x); break;
    }
  }

  Tensor r(a.shape(), std::move(out));
  Tape* tape = Tape::active();
  if (!tape || !a.tracked()) return r;
  const int pa = node_on(a, tape);
  Tensor xin = a.detached();
  Tensor yout = r.detached();
  auto back = [=](const std::vector<double>& dout, Tape::Sink& s) {
    auto& acc = s.at(pa, n);
    const auto* x = xin.data().data();
    const auto* y = yout.data().data();
    for (int i = 0; i < n; ++i) {
      double d = 0.0;
      switch (op) {
        case Unary::Relu: d = x[i] > 0.0 ? 1.0 : 0.0; break;
        case Unary::Sigmoid: d = y[i] * (1.0 - y[i]); break;
        case Unary::Tanh: d = 1.0 - y[i] * y[i]; break;
        case Unary::Exp: d = y[i]; break;
        case Unary::Log: d = 1.0 / x[i]; break;
        case Unary::Sqrt: d = 0.5 / y[i]; break;
        case Unary::Abs: d = x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0); break;
      }
      acc[static_cast<std::size_t>(i)] += dout[static_cast<std::size_t>(i)] * d;
    }
  };
  return tape->emit(std::move(r), {pa}, std::move(back));
}

Tensor relu(const Tensor& a) { return unary(Unary::Relu, a); }
Tensor sigmoid(const Tensor& a) { return unary(Unary::Sigmoid, a); }
Tensor tanh_t(const Tensor& a) { return unary(Unary::Tanh, a); }
Tensor exp_t(const Tensor& a) { return unary(Unary::Exp, a); }
Tensor log_t(const Tensor& a) { return unary(Unary::Log, a); }
Tensor sqrt_t(const Tensor& a) { return unary(Unary::Sqrt, a); }
Tensor abs_t(const Tensor& a) { return unary(Unary::Abs, a); }

Tensor softmax_rows(const Tensor& a) {
  if (a.rank() != 2) throw std::invalid_argument("softmax_rows: rank-2 required, got " + shape_str(a.shape()));
  const int m = a.rows(), n = a.cols();
  const auto* p = a.data().data();
  std::vector<double> out(static_cast<std::size_t>(m) * n);
  for (int i = 0; i < m; ++i) {
    const std::size_t base = static_cast<std::size_t>(i) * n;
    double mx = p[base];
    for (int j = 1; j < n; ++j) mx = std::max(mx, p[base + j]);
    double s = 0.0;
    for (int j = 0; j < n; ++j) {
      const double e = std::exp(p[base + j] - mx);
      out[base + j] = e;
      s += e;
    }
    for (int j = 0; j < n; ++j) out[base + j] /= s;
  }

  Tensor r(a.shape(), std::move(out));
  Tape* tape = Tape::active();
  if (!tape || !a.tracked()) return r;
  const int pa = node_on(a, tape);
  Tensor yout = r.detached();
  auto back = [=](const std::vector<double>& dout, Tape::Sink& s) {
    auto& acc = s.at(pa, m * n);
    const auto* y = yout.data().data();
    for (int i = 0; i < m; ++i) {
      const std::size_t base = static_cast<std::size_t>(i) * n;
      double dot = 0.0;
      for (int j = 0; j < n; ++j) dot += dout[base + j] * y[base + j];
      for (int j = 0; j < n; ++j) acc[base + j] += y[base + j] * (dout[base + j] - dot);
    }
  };
  return tape->emit(std::move(r), {pa}, std::move(back));
}

Tensor norm_rows(const Tensor& a) {
  if (a.rank() != 2) throw std::invalid_argument("norm_rows: rank-2 required, got " + shape_str(a.shape()));
  const int m = a.rows(), n = a.cols();
  const auto* p = a.data().data();
  std::vector<double> out(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    double s = 0.0;
    for (int j = 0; j < n; ++j) {
      const double v = p[static_cast<std::size_t>(i) * n + j];
      s += v * v;
    }
    const double norm = std::sqrt(s);
    if (norm < 1e-12)
      throw DegenerateInput("norm_rows: row " + std::to_string(i) + " has vanishing norm");
    out[static_cast<std::size_t>(i)] = norm;
  }

  Tensor r(Shape{m}, std::move(out));
  Tape* tape = Tape::active();
  if (!tape || !a.tracked()) return r;
  const int pa = node_on(a, tape);
  Tensor xin = a.detached();
  Tensor yout = r.detached();
  auto back = [=](const std::vector<double>& dout, Tape::Sink& s) {
    auto& acc = s.at(pa, m * n);
    const auto* x = xin.data().data();
    const auto* y = yout.data().data();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        acc[static_cast<std::size_t>(i) * n + j] +=
            dout[static_cast<std::size_t>(i)] * x[static_cast<std::size_t>(i) * n + j] / y[i];
  };
  return tape->emit(std::move(r), {pa}, std::move(back));
}

// ---------------------------------------------------------------------------
// Structure

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size())
    throw std::invalid_argument("reshape: size mismatch " + shape_str(a.shape()) + " -> " + shape_str(shape));
  Tensor r(shape, std::vector<double>(a.data().begin(), a.data().end()));
  Tape* tape = Tape::active();
  if (!tape || !a.tracked()) return r;
  const int pa = node_on(a, tape);
  const int n = a.size();
  auto back = [=](const std::vector<double>& dout, Tape::Sink& s) {
    auto& acc = s.at(pa, n);
    for (int i = 0; i < n; ++i) acc[static_cast<std::size_t>(i)] += dout[static_cast<std::size_t>(i)];
  };
  return tape->emit(std::move(r), {pa}, std::move(back));
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  const int m = parts[0].rows();
  int total = 0;
  for (const auto& t : parts) {
    if (t.rank() != 2 || t.rows() != m) shape_error("concat_cols", parts[0].shape(), t.shape());
    total += t.cols();
  }
  std::vector<double> out(static_cast<std::size_t>(m) * total);
  int off = 0;
  for (const auto& t : parts) {
    const int c = t.cols();
    const auto* p = t.data().data();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < c; ++j)
        out[static_cast<std::size_t>(i) * total + off + j] = p[static_cast<std::size_t>(i) * c + j];
    off += c;
  }

  Tensor r(Shape{m, total}, std::move(out));
  Tape* tape = Tape::active();
  bool tracked = false;
  for (const auto& t : parts) tracked |= t.tracked();
  if (!tape || !tracked) return r;

  std::vector<int> nodes;
  std::vector<int> widths;
  for (const auto& t : parts) {
    nodes.push_back(node_on(t, tape));
    widths.push_back(t.cols());
  }
  auto back = [=](const std::vector<double>& dout, Tape::Sink& s) {
    int o = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      const int c = widths[k];
      if (nodes[k] >= 0) {
        auto& acc = s.at(nodes[k], m * c);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < c; ++j)
            acc[static_cast<std::size_t>(i) * c + j] += dout[static_cast<std::size_t>(i) * total + o + j];
      }
      o += c;
    }
  };
  return tape->emit(std::move(r), nodes, std::move(back));
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  const int n = parts[0].cols();
  int total = 0;
  for (const auto& t : parts) {
    if (t.rank() != 2 || t.cols() != n) shape_error("concat_rows", parts[0].shape(), t.shape());
    total += t.rows();
  }
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(total) * n);
  for (const auto& t : parts) out.insert(out.end(), t.data().begin(), t.data().end());

  Tensor r(Shape{total, n}, std::move(out));
  Tape* tape = Tape::active();
  bool tracked = false;
  for (const auto& t : parts) tracked |= t.tracked();
  if (!tape || !tracked) return r;

  std::vector<int> nodes;
  std::vector<int> heights;
  for (const auto& t : parts) {
    nodes.push_back(node_on(t, tape));
    heights.push_back(t.rows());
  }
  auto back = [=](const std::vector<double>& dout, Tape::Sink& s) {
    int o = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      const int h = heights[k];
      if (nodes[k] >= 0) {
        auto& acc = s.at(nodes[k], h * n);
        for (int i = 0; i < h * n; ++i)
          acc[static_cast<std::size_t>(i)] += dout[static_cast<std::size_t>(o) * n + i];
      }
      o += h;
    }
  };
  return tape->emit(std::move(r), nodes, std::move(back));
}

Tensor slice_cols(const Tensor& a, int c0, int c1) {
  if (a.rank() != 2 || c0 < 0 || c1 > a.cols() || c0 >= c1)
    throw std::invalid_argument("slice_cols: bad range [" + std::to_string(c0) + "," + std::to_string(c1) +
                                ") for shape " + shape_str(a.shape()));
  const int m = a.rows(), n = a.cols(), w = c1 - c0;
  std::vector<double> out(static_cast<std::size_t>(m) * w);
  const auto* p = a.data().data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < w; ++j)
      out[static_cast<std::size_t>(i) * w + j] = p[static_cast<std::size_t>(i) * n + c0 + j];

  Tensor r(Shape{m, w}, std::move(out));
  Tape* tape = Tape::active();
  if (!tape || !a.tracked()) return r;
  const int pa = node_on(a, tape);
  auto back = [=](const std::vector<double>& dout, Tape::Sink& s) {
    auto& acc = s.at(pa, m * n);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < w; ++j)
        acc[static_cast<std::size_t>(i) * n + c0 + j] += dout[static_cast<std::size_t>(i) * w + j];
  };
  return tape->emit(std::move(r), {pa}, std::move(back));
}

Tensor slice_rows(const Tensor& a, int r0, int r1) {
  if (a.rank() != 2 || r0 < 0 || r1 > a.rows() || r0 >= r1)
    throw std::invalid_argument("slice_rows: bad range [" + std::to_string(r0) + "," + std::to_string(r1) +
                                ") for shape " + shape_str(a.shape()));
  const int n = a.cols(), h = r1 - r0;
  std::vector<double> out(a.data().begin() + static_cast<std::ptrdiff_t>(r0) * n,
                          a.data().begin() + static_cast<std::ptrdiff_t>(r1) * n);

  Tensor r(Shape{h, n}, std::move(out));
  Tape* tape = Tape::active();
  if (!tape || !a.tracked()) return r;
  const int pa = node_on(a, tape);
  const int total = a.size();
  auto back = [=](const std::vector<double>& dout, Tape::Sink& s) {
    auto& acc = s.at(pa, total);
    for (int i = 0; i < h * n; ++i)
      acc[static_cast<std::size_t>(r0) * n + i] += dout[static_cast<std::size_t>(i)];
  };
  return tape->emit(std::move(r), {pa}, std::move(back));
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& idx) {
  if (a.rank() != 2) throw std::invalid_argument("gather_rows: rank-2 required");
  const int m = a.rows(), n = a.cols();
  const int h = static_cast<int>(idx.size());
  std::vector<double> out(static_cast<std::size_t>(h) * n);
  const auto* p = a.data().data();
  for (int i = 0; i < h; ++i) {
    const int src = idx[static_cast<std::size_t>(i)];
    if (src < 0 || src >= m) throw std::invalid_argument("gather_rows: index out of range");
    for (int j = 0; j < n; ++j)
      out[static_cast<std::size_t>(i) * n + j] = p[static_cast<std::size_t>(src) * n + j];
  }

  Tensor r(Shape{h, n}, std::move(out));
  Tape* tape = Tape::active();
  if (!tape || !a.tracked()) return r;
  const int pa = node_on(a, tape);
  auto back = [=](const std::vector<double>& dout, Tape::Sink& s) {
    auto& acc = s.at(pa, m * n);
    for (int i = 0; i < h; ++i) {
      const int src = idx[static_cast<std::size_t>(i)];
      for (int j = 0; j < n; ++j)
        acc[static_cast<std::size_t>(src) * n + j] += dout[static_cast<std::size_t>(i) * n + j];
    }
  };
  return tape->emit(std::move(r), {pa}, std::move(back));
}

Tensor cross_cols(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.rows() != 3 || b.rows() != 3 || a.cols() != b.cols())
    shape_error("cross_cols", a.shape(), b.shape());
  const int f = a.cols();
  const auto* pa = a.data().data();
  const auto* pb = b.data().data();
  std::vector<double> out(static_cast<std::size_t>(3) * f);
  auto X = [f](const double* p, int r, int c) { return p[static_cast<std::size_t>(r) * f + c]; };
  for (int c = 0; c < f; ++c) {
    out[0 * static_cast<std::size_t>(f) + c] = X(pa, 1, c) * X(pb, 2, c) - X(pa, 2, c) * X(pb, 1, c);
    out[1 * static_cast<std::size_t>(f) + c] = X(pa, 2, c) * X(pb, 0, c) - X(pa, 0, c) * X(pb, 2, c);
    out[2 * static_cast<std::size_t>(f) + c] = X(pa, 0, c) * X(pb, 1, c) - X(pa, 1, c) * X(pb, 0, c);
  }

  Tensor r(Shape{3, f}, std::move(out));
  Tape* tape = Tape::active();
  if (!tape || !any_tracked({&a, &b})) return r;
  const int na = node_on(a, tape), nb = node_on(b, tape);
  Tensor acap = a.detached(), bcap = b.detached();
  // adjoints: dL/da = b x g, dL/db = g x a (columnwise)
  auto back = [=](const std::vector<double>& dout, Tape::Sink& s) {
    const auto* xa = acap.data().data();
    const auto* xb = bcap.data().data();
    auto X = [f](const double* p, int r, int c) { return p[static_cast<std::size_t>(r) * f + c]; };
    if (na >= 0) {
      auto& acc = s.at(na, 3 * f);
      for (int c = 0; c < f; ++c) {
        acc[0 * static_cast<std::size_t>(f) + c] += X(xb, 1, c) * X(dout.data(), 2, c) - X(xb, 2, c) * X(dout.data(), 1, c);
        acc[1 * static_cast<std::size_t>(f) + c] += X(xb, 2, c) * X(dout.data(), 0, c) - X(xb, 0, c) * X(dout.data(), 2, c);
        acc[2 * static_cast<std::size_t>(f) + c] += X(xb, 0, c) * X(dout.data(), 1, c) - X(xb, 1, c) * X(dout.data(), 0, c);
      }
    }
    if (nb >= 0) {
      auto& acc = s.at(nb, 3 * f);
      for (int c = 0; c < f; ++c) {
        acc[0 * static_cast<std::size_t>(f) + c] += X(dout.data(), 1, c) * X(xa, 2, c) - X(dout.data(), 2, c) * X(xa, 1, c);
        acc[1 * static_cast<std::size_t>(f) + c] += X(dout.data(), 2, c) * X(xa, 0, c) - X(dout.data(), 0, c) * X(xa, 2, c);
        acc[2 * static_cast<std::size_t>(f) + c] += X(dout.data(), 0, c) * X(xa, 1, c) - X(dout.data(), 1, c) * X(xa, 0, c);
      }
    }
  };
  return tape->emit(std::move(r), {na, nb}, std::move(back));
}

}  // namespace canonae
