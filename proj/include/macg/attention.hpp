#pragma once

#include <vector>

#include "macg/graph.hpp"
#include "macg/tape.hpp"

namespace macg {

using ad::Tape;
using ad::Var;

/// Per-mechanism on/off switches. A disabled attention falls back to masked
/// mean-pooling of the projected neighbor features over the same support.
struct AblationSwitches {
  bool intra_part = true;
  bool inter_part = true;
  bool inter_graph = true;
  bool readout_attention = true;
};

/// Tape handles for one layer's learned weights. w_e/a_e carry one replica
/// per attention head; heads are combined by averaging.
struct LayerParamVars {
  std::vector<Var> w_e;  // head -> d' x d_in, shared by intra- and inter-part attention
  std::vector<Var> a_e;  // head -> 2d' x 1 pairwise scorer vector
  Var w_z;               // d' x d_in inter-graph projection, applied per part
  Var mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

struct ReadoutParamVars {
  Var w_u;  // embed x (P*d)
  Var v_u;  // embed x 1, reduces W_u h to a scalar logit
};

/// Node states on the tape: one width x N matrix per part, columns are nodes.
struct StateVars {
  std::vector<Var> parts;
  int part_count() const { return static_cast<int>(parts.size()); }
};

/// Attention weights and raw importances recorded for one graph and layer.
/// Rows index recipients; dummy-recipient rows are zeroed on extraction and
/// masked source entries are exactly 0.
struct GraphLayerAttention {
  // [head][part]: N x N, entry (i, j) weights the message j -> i
  std::vector<std::vector<Matrix>> intra_alpha, intra_e;
  // [head][part]: N x (P-1)N; column blocks ordered by source part q
  // ascending with q = p skipped, each block N wide indexed by source node j
  std::vector<std::vector<Matrix>> inter_alpha, inter_e;
  Matrix beta, z;  // N x N_partner
};

struct AttentionRecord {
  std::vector<GraphLayerAttention> s_layers, r_layers;
  Matrix gamma_s, u_s, gamma_r, u_r;  // 1 x N
};

std::vector<Var> intra_part_messages(Tape& tape, const StateVars& states,
                                     const ContextGraph& g, const LayerParamVars& p,
                                     bool attention_on, double attention_slope,
                                     GraphLayerAttention* record);

/// Joint attention over all (node, part != p) pairs. Throws ContractError
/// when P < 2.
std::vector<Var> inter_part_messages(Tape& tape, const StateVars& states,
                                     const ContextGraph& g, const LayerParamVars& p,
                                     bool attention_on, double attention_slope,
                                     GraphLayerAttention* record);

/// Message from partner graph nodes into each recipient node; all P parts of
/// a recipient share the same attention row, so a single d' x N matrix is
/// returned.
Var inter_graph_messages(Tape& tape, const StateVars& recipient, const StateVars& partner,
                         const std::vector<bool>& recipient_mask,
                         const std::vector<bool>& partner_mask, Var w_z,
                         bool attention_on, GraphLayerAttention* record);

/// MLP update over the concatenation of previous features and the three
/// message types; dummy columns are forced back to zero.
StateVars update_nodes(Tape& tape, const StateVars& prev, const std::vector<Var>& intra,
                       const std::vector<Var>& inter_part, Var inter_graph,
                       const ContextGraph& g, const LayerParamVars& p);

struct ReadoutResult {
  Var embedding;  // embed x 1
  Var gamma;      // 1 x N
  Var logits;     // 1 x N
};

ReadoutResult readout(Tape& tape, const StateVars& final_states, const ContextGraph& g,
                      const ReadoutParamVars& p, bool attention_on,
                      Matrix* gamma_record, Matrix* logit_record);

/// Record helper: returns a copy of m with recipient rows of dummy nodes
/// zeroed out.
Matrix zero_dummy_rows(Matrix m, const std::vector<bool>& real_mask);

}  // namespace macg
