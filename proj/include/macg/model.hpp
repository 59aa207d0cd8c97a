#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "macg/attention.hpp"
#include "macg/data.hpp"
#include "macg/gradcheck.hpp"
#include "macg/graph.hpp"
#include "macg/losses.hpp"
#include "macg/tape.hpp"

namespace macg {

struct ModelConfig {
  int parts = 4;       // P
  int input_dim = 16;  // D, width of the ingested part features
  int hidden_dim = 16; // d, constant across layers
  int embed_dim = 16;  // group embedding width
  int layers = 2;      // T
  int heads = 1;
  double tau = 1.0;
  double margin = 1.0;
  double attention_slope = 0.2;  // negative slope of the pairwise scorer
  int sinkhorn_train_iters = 20;
  int sinkhorn_eval_iters = 100;
  double sinkhorn_tol = 1e-12;  // evaluation-path stop; tight enough that the
                                // swapped-pair transpose agreement holds at 1e-9
  bool normalize_embeddings = false;  // unit-normalize h before Eq. 16 distances
  AblationSwitches ablation;

  void validate() const;
  int layer_input_dim(int layer) const { return layer == 0 ? input_dim : hidden_dim; }
  int node_dim() const { return parts * hidden_dim; }
};

struct LayerParams {
  std::vector<Matrix> w_e, a_e;  // per head
  Matrix w_z;
  Matrix mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

struct ReadoutParams {
  Matrix w_u, v_u;
};

/// All learned weights, enumerable in a fixed deterministic order.
struct ParameterSet {
  std::vector<LayerParams> layers;
  ReadoutParams readout;
  Matrix affinity_weight;  // A of the node-affinity bilinear form

  std::vector<std::pair<std::string, Matrix*>> entries();
  std::vector<std::pair<std::string, const Matrix*>> entries() const;
  ad::NamedParams named() const;
  size_t scalar_count() const;
};

/// Xavier-uniform weights, zero biases, fully determined by the seed.
ParameterSet init_params(const ModelConfig& cfg, uint64_t seed);

/// Tape handles for a registered ParameterSet.
struct ParamVarSet {
  std::vector<LayerParamVars> layers;
  ReadoutParamVars readout;
  Var affinity_weight;
};

ParamVarSet register_params(Tape& tape, const ParameterSet& params);

/// Everything the paired forward pass leaves on the tape.
struct PairTrace {
  Var h_s, h_r;
  Var pair_distance;  // ||h_s - h_r||^2, 1x1
  StateVars final_s, final_r;
  Var affinity;    // NxN
  Var sinkhorn;    // NxN, fixed training unroll
  AttentionRecord record;
};

PairTrace forward_pair_traced(Tape& tape, const ContextGraph& g_s, const ContextGraph& g_r,
                              const ParamVarSet& params, const ModelConfig& cfg);

struct PairOutput {
  Matrix h_s, h_r;
  NodeStates final_s, final_r;
  AttentionRecord record;
  Matrix sinkhorn_s;  // converged evaluation-path Sinkhorn
  int sinkhorn_iterations = 0;
  double sinkhorn_residual = 0.0;
  double pair_distance = 0.0;
};

PairOutput forward_pair(const ContextGraph& g_s, const ContextGraph& g_r,
                        const ParameterSet& params, const ModelConfig& cfg);

/// Adaptive-moment update with the stepped learning-rate schedule.
struct OptimizerState {
  double initial_lr = 3e-4;
  std::vector<int> milestones{80, 160};
  double decay = 0.1;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double lr = 3e-4;  // active rate, set per epoch
  int64_t step_count = 0;
  std::map<std::string, Matrix> moment1, moment2;

  double lr_for_epoch(int epoch) const;
  void apply(ParameterSet& params, const ad::GradientMap& grads);
};

/// One Algorithm-1 step on a prepared (padded) pair: forward, losses,
/// backward, parameter update. Returns the pre-update losses. Aborts with
/// NumericError before updating if the loss is non-finite.
LossReport train_step(const ContextGraph& g_s, const ContextGraph& g_r,
                      const PairLabels& labels, ParameterSet& params,
                      OptimizerState& opt, const ModelConfig& cfg);

/// -||h_s - h_r||^2; higher means more similar.
double score_group_pair(const ContextGraph& g_s, const ContextGraph& g_r,
                        const ParameterSet& params, const ModelConfig& cfg);

struct PersonScores {
  Matrix similarity;      // padded NxN; dummy rows/cols carry lowest()
  Matrix correspondence;  // Sinkhorn S for correspondence-assisted ranking
};

PersonScores score_person_pairs(const ContextGraph& g_s, const ContextGraph& g_r,
                                const ParameterSet& params, const ModelConfig& cfg);

/// Labels derived from graph/person ids: y_g from group ids, person labels
/// and the ground-truth permutation over real node pairs for positive pairs.
PairLabels make_pair_labels(const ContextGraph& s, const ContextGraph& r, double margin);

/// Pads both graphs to a common size and builds labels from person ids.
struct PreparedPair {
  ContextGraph s, r;
  PairLabels labels;
};

PreparedPair prepare_pair(const DatasetRecord& a, const DatasetRecord& b,
                          const ModelConfig& cfg);

/// Rebuilds a ParamVarSet from the name->Var map that grad_check registers.
ParamVarSet param_vars_from_map(const ModelConfig& cfg, const ad::ParamVars& vars);

std::string config_to_json_string(const ModelConfig& cfg);
ModelConfig config_from_json_string(const std::string& text);

// -- checkpoint container: config + seed + parameter tensors -----------------

struct Checkpoint {
  ModelConfig config;
  uint64_t seed = 0;
  ParameterSet params;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// -- training loop ------------------------------------------------------------

struct TrainSchedule {
  int epochs = 200;
  double initial_lr = 3e-4;
  std::vector<int> milestones{80, 160};
  double decay = 0.1;
};

struct EpochStats {
  int epoch = 0;
  int steps = 0;
  double lr = 0.0;
  LossReport mean;
};

struct TrainResult {
  ParameterSet params;
  std::vector<EpochStats> history;
};

/// Pairwise training over all same-group view pairs plus 1:1 sampled
/// negatives, one pair per step, reshuffled every epoch under the seed.
TrainResult train_model(const std::vector<DatasetRecord>& records, const ModelConfig& cfg,
                        const TrainSchedule& schedule, uint64_t seed,
                        const std::function<void(const EpochStats&)>& on_epoch = {});

}  // namespace macg
