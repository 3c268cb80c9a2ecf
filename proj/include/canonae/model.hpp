#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "canonae/data.hpp"
#include "canonae/groups.hpp"
#include "canonae/nn.hpp"
#include "canonae/tensor.hpp"

namespace canonae {

enum class Task { DigitSets, DigitSetsBaseline, Se3PointCloud, So2PointSet };

std::string task_name(Task t);
Task task_from_name(const std::string& name);

struct ModelSpec {
  Task task = Task::DigitSets;

  // data dimensions
  int set_n = 20;    // digit-set rows
  int set_d = 10;    // digit classes
  int cloud_n = 4;   // point-cloud nodes

  // architecture
  int zdim = 16;
  int fs = 32;
  int fv = 32;
  int gnn_layers = 5;
  int hidden = 64;
  int gamma_layers = 3;
  int beta_layers = 3;
  int dec_layers = 4;
  double cutoff = 1e9;
  double tau = 1.0;        // softsort temperature during training
  double tau_decay = 1.0;  // per-epoch multiplicative anneal
  double tau_min = 0.05;   // anneal floor
  double eval_tau = 1e-3;  // hardening temperature at evaluation
  bool set_norm = false;

  // optimizer
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 10.0;  // global-norm clip; 0 disables
  double lr_decay = 1.0;    // per-epoch multiplicative decay
  double lr_min = 1e-5;     // decay floor
  int epochs = 10;
  int batch = 32;
  std::uint64_t seed = 1;
  // stop once accuracy >= target (digit tasks) or mse <= target (clouds); 0 = off
  double target_metric = 0.0;

  void validate() const;
  std::string to_json() const;
  static ModelSpec from_json(const std::string& text);  // rejects unknown keys
};

struct ModelState {
  ModelSpec spec;
  ParamStore params;
  std::unordered_map<std::string, std::vector<double>> adam_m, adam_v;
  long long step = 0;

  std::string to_json() const;
  static ModelState from_json(const std::string& text);
};

ModelState init_model(const ModelSpec& spec);

// Raw mu outputs ahead of the deterministic xi maps: node-averaged frame
// columns (se3: [3,2]; so2: [2,1]) and translation ([1,3], se3 only). Defined
// even where xi would reject the frame as degenerate (symmetric inputs).
struct MuOut {
  Tensor z;
  Tensor scores;
  Tensor wbar;
  Tensor tbar;
};
MuOut mu_outputs(const ModelState& state, const Sample& sample);

// Differentiable forward pieces shared by the loss and by encode().
struct Forward {
  Tensor z;             // [zdim]
  Tensor scores;        // [N] (digit / se3 tasks)
  Tensor perm_relaxed;  // [N,N] softsort of scores
  Tensor rot;           // [dim,dim] (se3 / so2 tasks)
  Tensor trans;         // [1,3] (se3 task)
};
Forward forward_encode(const Ctx& ctx, const ModelSpec& spec, const Sample& sample, double tau);

struct EncodeOut {
  Tensor z;
  GroupElement g;                     // task group element (Perm / SE3 / Rot2)
  std::optional<GroupElement> perm;   // S_N component of the se3 task
};
// Invariant embedding plus predicted group action; retries once with 1e-8
// jitter on a degenerate frame.
EncodeOut encode(const ModelState& state, const Sample& sample);

struct DecodeOut {
  Tensor canonical;  // decoder output before any group action
  Tensor aligned;    // rho_X(g) applied to the canonical element
};
DecodeOut decode(const ModelState& state, const Tensor& z, const GroupElement& g,
                 const std::optional<GroupElement>& perm = std::nullopt);

// Group-invariant reconstruction objective d(rho(psi(x)) delta(eta(x)), x);
// cross-entropy for digit tasks, coordinate MSE for point clouds.
Tensor sample_loss(const Ctx& ctx, const ModelSpec& spec, const Sample& sample);
double loss_value(const ModelState& state, const Sample& sample);

struct MetricsRow {
  int epoch = 0;
  double loss = 0, inv_gap = 0, acc_or_mse = 0, chirality = 0;
};

struct TrainResult {
  ModelState state;
  std::vector<MetricsRow> log;
  bool aborted = false;
  std::string abort_reason;
};

TrainResult train(const ModelSpec& spec, const Dataset& ds, int workers = 1);
TrainResult train_continue(ModelState state, const Dataset& ds, int epochs, int workers = 1);

struct EvalMetrics {
  double mse = 0;            // per-coordinate mean squared error (clouds)
  double accuracy = 0;       // element-wise accuracy (digit tasks)
  double inv_gap = 0;        // max over samples/g of |z(gx) - z(x)|_inf
  double equi_gap = 0;       // stabilizer-residual action error of psi
  double chirality = 0;      // centroid distance / mean intra-class spread
  int samples = 0;
};
EvalMetrics evaluate(const ModelState& state, const Dataset& ds, int group_draws, std::uint64_t seed);

struct SampleReport {
  std::vector<double> z;
  std::string g_json;
  double recon_error = 0;
  int label = -1;
};
std::vector<SampleReport> per_sample_report(const ModelState& state, const Dataset& ds);

// An element of the task's (possibly product) symmetry group, used for
// invariance sweeps: the se3 task combines an SE(3) action with a row
// permutation, the others use a single component.
struct TaskElement {
  std::optional<GroupElement> spatial;  // Rot2 or SE3
  std::optional<GroupElement> perm;
};
TaskElement random_task_element(const ModelSpec& spec, Rng& rng);
Sample apply_task_element(const TaskElement& g, const Sample& sample);

}  // namespace canonae
