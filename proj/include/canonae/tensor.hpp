#pragma once

#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace canonae {

using Shape = std::vector<int>;

int shape_size(const Shape& s);
std::string shape_str(const Shape& s);

// Raised when an input is numerically unusable (e.g. a row with vanishing
// norm); the caller decides whether to retry with jitter or abort.
struct DegenerateInput : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class Tape;

// Immutable dense float64 tensor. Copies are cheap (shared storage). A tensor
// recorded on a tape carries the node id; a plain tensor participates in
// forward math but contributes no gradient.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor vec(std::vector<double> data);                   // shape [n]
  static Tensor matrix(int rows, int cols, std::vector<double> data);
  static Tensor eye(int n);

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int size() const;
  int rows() const;  // rank-2 only
  int cols() const;  // rank-2 only
  bool empty() const { return data_ == nullptr; }

  double item() const;  // size-1 tensors
  double at(int i) const { return (*data_)[static_cast<std::size_t>(i)]; }
  double at(int i, int j) const { return (*data_)[static_cast<std::size_t>(i) * cols() + j]; }
  std::span<const double> data() const { return {data_->data(), data_->size()}; }

  bool tracked() const { return node_ >= 0; }
  int node() const { return node_; }
  const Tape* origin() const { return origin_; }
  Tensor detached() const;

 private:
  friend class Tape;
  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  int node_ = -1;
  const Tape* origin_ = nullptr;
};

// Leaf gradients produced by Tape::backward, keyed by parameter storage.
class Gradients {
 public:
  bool has(const Tensor& param) const;
  // Gradient of the loss w.r.t. `param`; zeros if the leaf was watched but
  // never used. Throws if `param` was not watched.
  Tensor grad(const Tensor& param) const;
  const std::vector<double>& raw(const Tensor& param) const;

  // this += other (entries missing on either side are treated as zero)
  void accumulate(const Gradients& other);
  void scale(double factor);
  double l2_norm() const;
  std::size_t size() const { return entries_.size(); }

 private:
  friend class Tape;
  struct Entry {
    Shape shape;
    std::vector<double> g;
  };
  std::unordered_map<const void*, Entry> entries_;
};

// Reverse-mode gradient tape. Append-only: every node's inputs precede it, so
// a single reverse sweep visits each node exactly once. One tape per worker
// thread; tapes are created per training step and discarded after backward.
class Tape {
 public:
  // Accumulation sink handed to node backward functions.
  struct Sink {
    std::vector<std::vector<double>>& slots;
    std::vector<double>& at(int node, int size) {
      auto& v = slots[static_cast<std::size_t>(node)];
      if (v.empty()) v.assign(static_cast<std::size_t>(size), 0.0);
      return v;
    }
  };
  using BackwardFn = std::function<void(const std::vector<double>& dout, Sink& sink)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Registers a parameter as a differentiable leaf. Idempotent per storage:
  // watching the same tensor twice yields the same node, so gradient
  // contributions accumulate.
  Tensor watch(const Tensor& param);

  // Gradients of a tracked scalar loss w.r.t. every watched leaf. Pure:
  // calling it twice without re-recording yields identical results.
  Gradients backward(const Tensor& loss) const;

  int size() const { return static_cast<int>(nodes_.size()); }

  // --- op-internal API ---
  static Tape* active();
  // Wraps `value` as the output of a recorded node.
  Tensor emit(Tensor value, std::vector<int> parents, BackwardFn back);

 private:
  struct Node {
    std::vector<int> parents;
    BackwardFn back;  // empty for leaves
    int size = 0;
  };
  std::vector<Node> nodes_;
  std::unordered_map<const void*, int> leaf_node_;
  std::vector<std::pair<const void*, Shape>> leaves_;
};

// RAII guard installing a tape as the active one for the current thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, double b);
Tensor sub(const Tensor& a, double b);
Tensor sub(double a, const Tensor& b);
Tensor mul(const Tensor& a, double b);
Tensor div(const Tensor& a, double b);
Tensor neg(const Tensor& a);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor outer(const Tensor& u, const Tensor& v);  // [m] x [n] -> [m,n]

// ---- reductions (axis removed from the shape) ----
enum class Reduce { Sum, Mean, Max };
Tensor reduce(Reduce op, const Tensor& a, int axis);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);

// ---- nonlinearities ----
enum class Unary { Relu, Sigmoid, Tanh, Exp, Log, Sqrt, Abs };
Tensor unary(Unary op, const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh_t(const Tensor& a);
Tensor exp_t(const Tensor& a);
Tensor log_t(const Tensor& a);
Tensor sqrt_t(const Tensor& a);
Tensor abs_t(const Tensor& a);
Tensor softmax_rows(const Tensor& a);  // rank-2; each row sums to 1
Tensor norm_rows(const Tensor& a);     // rank-2 -> [rows]; throws DegenerateInput on ~zero rows

// ---- structure ----
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat_cols(const std::vector<Tensor>& parts);  // rank-2, equal rows
Tensor concat_rows(const std::vector<Tensor>& parts);  // rank-2, equal cols
Tensor slice_cols(const Tensor& a, int c0, int c1);
Tensor slice_rows(const Tensor& a, int r0, int r1);
Tensor gather_rows(const Tensor& a, const std::vector<int>& idx);
Tensor cross_cols(const Tensor& a, const Tensor& b);  // [3,f] x [3,f] columnwise cross

}  // namespace canonae
