#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "canonae/groups.hpp"
#include "canonae/rng.hpp"
#include "canonae/tensor.hpp"

namespace canonae {

// Flat named parameter container with deterministic iteration order.
class ParamStore {
 public:
  Tensor& create(const std::string& name, Tensor init);
  bool has(const std::string& name) const { return map_.count(name) > 0; }
  const Tensor& get(const std::string& name) const;
  void set(const std::string& name, Tensor value);
  const std::vector<std::string>& names() const { return order_; }
  long long scalar_count() const;

  // checkpoint format: {"format": tag, "params": {name: {shape, data}}}
  std::string to_json() const;
  static ParamStore from_json(const std::string& text);

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, Tensor> map_;
};

// Forward-pass context: parameters plus the (optional) gradient tape. p()
// fetches a parameter, watching it when a tape is present. Parameters are
// read-only during forward/backward, so contexts are safe to share across
// batch workers.
struct Ctx {
  const ParamStore& params;
  Tape* tape = nullptr;
  Tensor p(const std::string& name) const;
};

enum class Act { None, Relu, Tanh, Sigmoid };

Tensor xavier_init(int in, int out, Rng& rng);

void init_dense(ParamStore& ps, const std::string& prefix, int in, int out, Rng& rng);
Tensor dense(const Ctx& ctx, const std::string& prefix, const Tensor& x, Act act = Act::None);

// layers >= 1; widths in -> hidden (layers-1 times) -> out, relu between
void init_mlp(ParamStore& ps, const std::string& prefix, int in, int hidden, int out, int layers, Rng& rng);
Tensor mlp(const Ctx& ctx, const std::string& prefix, const Tensor& x, int layers, Act hidden_act = Act::Relu,
           Act final_act = Act::None);

// Lexicographic order of rows; used to aggregate sets in a canonical order so
// the sum is bitwise permutation-invariant.
std::vector<int> canonical_row_order(const Tensor& rows);

struct SetEncoderCfg {
  int gamma_layers = 3;
  int beta_layers = 3;
  int hidden = 64;
  int feat = 64;   // per-element feature width (gamma output)
  int zdim = 16;
  bool set_norm = false;  // per-feature standardization over set elements
};

struct SetEncoding {
  Tensor z;            // [zdim], permutation-invariant
  Tensor per_element;  // [N, feat], permutation-equivariant
  Tensor scores;       // [N], input to softsort
};

void init_set_encoder(ParamStore& ps, const std::string& prefix, int in_dim, const SetEncoderCfg& cfg, Rng& rng);
SetEncoding set_encode(const Ctx& ctx, const std::string& prefix, const Tensor& rows, const SetEncoderCfg& cfg);

//

// Relaxed ascending-sort permutation matrix softmax(-|sort(s)_i - s_j| / tau),
// row-wise softmax; rows index sorted positions, columns input elements.
Tensor softsort(const Tensor& s, double tau);
// Greedy rowwise-argmax assignment (most confident row first), returned as the
// group element whose action on rows realizes the same reordering as the
// relaxed matrix's transpose; harden(softsort(s, tau->0)) == xi_perm(s).
GroupElement harden(const Tensor& relaxed);

// ---------------------------------------------------------------------------
// Rotation/translation-equivariant message passing (Appendix-D style layer,
// generic over spatial dimension 2 or 3).

struct GnnCfg {
  int fs = 32;
  int fv = 32;
  int layers = 5;
  int dim = 3;
  bool translation = false;  // model the t channel (k = 1)
  double cutoff = 1e9;
};

enum class NodeFeatureInit {
  SharedVector,  // one learned vector for every node (permutation-symmetric)
  IndexOneHot,   // e_i per node index (breaks S_N invariance; ordered tasks only)
  Features,      // projected per-node input features
  External,      // caller supplies the initial h rows (decoder use)
};

struct NodeState {
  Tensor h;               // [N, fs] rotation-invariant
  std::vector<Tensor> w;  // per node [dim, fv], rotation-equivariant, translation-invariant
  Tensor t;               // [N, dim] fully SE(n)-equivariant (empty when k = 0)
  Tensor positions;       // [N, dim]
};

void init_gnn(ParamStore& ps, const std::string& prefix, const GnnCfg& cfg, Rng& rng,
              NodeFeatureInit feat_init, int feature_dim = 0);
NodeState init_node_state(const Ctx& ctx, const std::string& prefix, const Tensor& positions,
                          const GnnCfg& cfg, NodeFeatureInit feat_init,
                          const std::optional<Tensor>& features = std::nullopt);
NodeState se3_layer(const Ctx& ctx, const std::string& prefix, const NodeState& state, const GnnCfg& cfg);
NodeState run_gnn(const Ctx& ctx, const std::string& prefix, NodeState state, const GnnCfg& cfg);

void init_gated_block(ParamStore& ps, const std::string& prefix, int fs, int fv, Rng& rng);
// h_row [1,fs], w_node [dim,fv] -> updated pair; exactly rotation-equivariant in w
std::pair<Tensor, Tensor> gated_equivariant_block(const Ctx& ctx, const std::string& prefix,
                                                  const Tensor& h_row, const Tensor& w_node, int fs, int fv);

// Fixed sinusoidal table [n, dim]; rows pairwise distinct.
Tensor positional_encoding_table(int n, int dim);

void init_symmetry_break(ParamStore& ps, const std::string& prefix, int zdim, int fs, int n, int dim, Rng& rng,
                         bool with_start = true);
// proj(z) + posenc(i) rows; the trainable start positions live at
// prefix + ".start" ([n, dim]).
Tensor positional_symmetry_break(const Ctx& ctx, const std::string& prefix, const Tensor& z, int n, int fs);

// ---------------------------------------------------------------------------
// Differentiable frame heads. These reproduce the xi maps bit-for-bit on the
// forward pass but run on the tape, so the reconstruction loss can reach the
// rotation prediction.

Tensor frame_so2(const Tensor& v);       // [1,2] -> [2,2]
Tensor frame_so3(const Tensor& w_cols);  // [3,2] -> [3,3]

// ---------------------------------------------------------------------------

Tensor mse_loss(const Tensor& a, const Tensor& b);
Tensor cross_entropy_rows(const Tensor& logits, const Tensor& onehot);

}  // namespace canonae
