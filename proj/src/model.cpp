#include "macg/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "macg/errors.hpp"
#include "macg/matching.hpp"
#include "macg/rng.hpp"

namespace macg {

namespace {

using nlohmann::json;

std::string layer_prefix(int layer) { return "layer" + std::to_string(layer) + "."; }

Matrix xavier(Rng& rng, int rows, int cols) {
  double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (auto& v : m.values()) v = rng.uniform(-bound, bound);
  return m;
}

StateVars lift_states(Tape& t, const NodeStates& states) {
  StateVars out;
  out.parts.reserve(states.parts.size());
  for (const auto& part : states.parts) out.parts.push_back(t.constant(part));
  return out;
}

NodeStates extract_states(const Tape& t, const StateVars& vars, int layer) {
  NodeStates out;
  out.layer = layer;
  for (Var v : vars.parts) out.parts.push_back(t.value(v));
  return out;
}

void check_pair_shapes(const ContextGraph& g_s, const ContextGraph& g_r,
                       const ModelConfig& cfg) {
  if (g_s.node_count != g_r.node_count) {
    throw ContractError("forward_pair: graphs must be padded to a common node count (" +
                        std::to_string(g_s.node_count) + " vs " +
                        std::to_string(g_r.node_count) + ")");
  }
  for (const ContextGraph* g : {&g_s, &g_r}) {
    if (g->part_count != cfg.parts) {
      throw DimensionError("forward_pair: graph has " + std::to_string(g->part_count) +
                           " parts, config expects " + std::to_string(cfg.parts));
    }
    if (g->feature_dim != cfg.input_dim) {
      throw DimensionError("forward_pair: graph feature dim " +
                           std::to_string(g->feature_dim) + ", config expects " +
                           std::to_string(cfg.input_dim));
    }
  }
}

Var normalized_embedding(Tape& t, Var h) {
  Var norm2 = t.sum(t.hadamard(h, h));
  return t.scale_by(h, t.rsqrt(norm2, 1e-12));
}

json config_to_json(const ModelConfig& cfg) {
  return json{{"parts", cfg.parts},
              {"input_dim", cfg.input_dim},
              {"hidden_dim", cfg.hidden_dim},
              {"embed_dim", cfg.embed_dim},
              {"layers", cfg.layers},
              {"heads", cfg.heads},
              {"tau", cfg.tau},
              {"margin", cfg.margin},
              {"attention_slope", cfg.attention_slope},
              {"sinkhorn_train_iters", cfg.sinkhorn_train_iters},
              {"sinkhorn_eval_iters", cfg.sinkhorn_eval_iters},
              {"sinkhorn_tol", cfg.sinkhorn_tol},
              {"normalize_embeddings", cfg.normalize_embeddings},
              {"ablation",
               {{"intra_part", cfg.ablation.intra_part},
                {"inter_part", cfg.ablation.inter_part},
                {"inter_graph", cfg.ablation.inter_graph},
                {"readout_attention", cfg.ablation.readout_attention}}}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig cfg;
  cfg.parts = j.at("parts").get<int>();
  cfg.input_dim = j.at("input_dim").get<int>();
  cfg.hidden_dim = j.at("hidden_dim").get<int>();
  cfg.embed_dim = j.at("embed_dim").get<int>();
  cfg.layers = j.at("layers").get<int>();
  cfg.heads = j.at("heads").get<int>();
  cfg.tau = j.at("tau").get<double>();
  cfg.margin = j.at("margin").get<double>();
  cfg.attention_slope = j.at("attention_slope").get<double>();
  cfg.sinkhorn_train_iters = j.at("sinkhorn_train_iters").get<int>();
  cfg.sinkhorn_eval_iters = j.at("sinkhorn_eval_iters").get<int>();
  cfg.sinkhorn_tol = j.at("sinkhorn_tol").get<double>();
  cfg.normalize_embeddings = j.at("normalize_embeddings").get<bool>();
  const auto& ab = j.at("ablation");
  cfg.ablation.intra_part = ab.at("intra_part").get<bool>();
  cfg.ablation.inter_part = ab.at("inter_part").get<bool>();
  cfg.ablation.inter_graph = ab.at("inter_graph").get<bool>();
  cfg.ablation.readout_attention = ab.at("readout_attention").get<bool>();
  return cfg;
}

}  // namespace

void ModelConfig::validate() const {
  if (parts < 1) throw ContractError("ModelConfig: parts must be >= 1");
  if (layers < 1) throw ContractError("ModelConfig: layers must be >= 1");
  if (heads < 1) throw ContractError("ModelConfig: heads must be >= 1");
  if (input_dim < 1 || hidden_dim < 1 || embed_dim < 1) {
    throw ContractError("ModelConfig: widths must be >= 1");
  }
  if (tau <= 0.0) throw ContractError("ModelConfig: tau must be positive");
  if (margin <= 0.0) throw ContractError("ModelConfig: margin must be positive");
  if (sinkhorn_train_iters < 1 || sinkhorn_eval_iters < 1) {
    throw ContractError("ModelConfig: sinkhorn iterations must be >= 1");
  }
  if (sinkhorn_tol <= 0.0) throw ContractError("ModelConfig: sinkhorn tol must be positive");
}

std::vector<std::pair<std::string, Matrix*>> ParameterSet::entries() {
  std::vector<std::pair<std::string, Matrix*>> out;
  for (size_t l = 0; l < layers.size(); ++l) {
    LayerParams& lp = layers[l];
    const std::string prefix = layer_prefix(static_cast<int>(l));
    for (size_t h = 0; h < lp.w_e.size(); ++h) {
      out.emplace_back(prefix + "head" + std::to_string(h) + ".w_e", &lp.w_e[h]);
      out.emplace_back(prefix + "head" + std::to_string(h) + ".a_e", &lp.a_e[h]);
    }
    out.emplace_back(prefix + "w_z", &lp.w_z);
    out.emplace_back(prefix + "mlp_w1", &lp.mlp_w1);
    out.emplace_back(prefix + "mlp_b1", &lp.mlp_b1);
    out.emplace_back(prefix + "mlp_w2", &lp.mlp_w2);
    out.emplace_back(prefix + "mlp_b2", &lp.mlp_b2);
  }
  out.emplace_back("readout.w_u", &readout.w_u);
  out.emplace_back("readout.v_u", &readout.v_u);
  out.emplace_back("affinity.a", &affinity_weight);
  return out;
}

std::vector<std::pair<std::string, const Matrix*>> ParameterSet::entries() const {
  auto mutable_entries = const_cast<ParameterSet*>(this)->entries();
  std::vector<std::pair<std::string, const Matrix*>> out;
  out.reserve(mutable_entries.size());
  for (auto& [name, ptr] : mutable_entries) out.emplace_back(name, ptr);
  return out;
}

ad::NamedParams ParameterSet::named() const {
  ad::NamedParams out;
  for (const auto& [name, ptr] : entries()) out.emplace_back(name, *ptr);
  return out;
}

size_t ParameterSet::scalar_count() const {
  size_t n = 0;
  for (const auto& [name, ptr] : entries()) n += ptr->size();
  return n;
}

ParameterSet init_params(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ParameterSet params;
  const int d = cfg.hidden_dim;
  for (int l = 0; l < cfg.layers; ++l) {
    const int d_in = cfg.layer_input_dim(l);
    LayerParams lp;
    for (int h = 0; h < cfg.heads; ++h) {
      lp.w_e.push_back(xavier(rng, d, d_in));
      lp.a_e.push_back(xavier(rng, 2 * d, 1));
    }
    lp.w_z = xavier(rng, d, d_in);
    lp.mlp_w1 = xavier(rng, d, d_in + 3 * d);
    lp.mlp_b1 = Matrix(d, 1);
    lp.mlp_w2 = xavier(rng, d, d);
    lp.mlp_b2 = Matrix(d, 1);
    params.layers.push_back(std::move(lp));
  }
  params.readout.w_u = xavier(rng, cfg.embed_dim, cfg.node_dim());
  params.readout.v_u = xavier(rng, cfg.embed_dim, 1);
  params.affinity_weight = xavier(rng, cfg.node_dim(), cfg.node_dim());
  return params;
}

ParamVarSet register_params(Tape& t, const ParameterSet& params) {
  ParamVarSet out;
  for (size_t l = 0; l < params.layers.size(); ++l) {
    const LayerParams& lp = params.layers[l];
    const std::string prefix = layer_prefix(static_cast<int>(l));
    LayerParamVars lv;
    for (size_t h = 0; h < lp.w_e.size(); ++h) {
      lv.w_e.push_back(t.param(prefix + "head" + std::to_string(h) + ".w_e", lp.w_e[h]));
      lv.a_e.push_back(t.param(prefix + "head" + std::to_string(h) + ".a_e", lp.a_e[h]));
    }
    lv.w_z = t.param(prefix + "w_z", lp.w_z);
    lv.mlp_w1 = t.param(prefix + "mlp_w1", lp.mlp_w1);
    lv.mlp_b1 = t.param(prefix + "mlp_b1", lp.mlp_b1);
    lv.mlp_w2 = t.param(prefix + "mlp_w2", lp.mlp_w2);
    lv.mlp_b2 = t.param(prefix + "mlp_b2", lp.mlp_b2);
    out.layers.push_back(std::move(lv));
  }
  out.readout.w_u = t.param("readout.w_u", params.readout.w_u);
  out.readout.v_u = t.param("readout.v_u", params.readout.v_u);
  out.affinity_weight = t.param("affinity.a", params.affinity_weight);
  return out;
}

ParamVarSet param_vars_from_map(const ModelConfig& cfg, const ad::ParamVars& vars) {
  ParamVarSet out;
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string prefix = layer_prefix(l);
    LayerParamVars lv;
    for (int h = 0; h < cfg.heads; ++h) {
      lv.w_e.push_back(vars.at(prefix + "head" + std::to_string(h) + ".w_e"));
      lv.a_e.push_back(vars.at(prefix + "head" + std::to_string(h) + ".a_e"));
    }
    lv.w_z = vars.at(prefix + "w_z");
    lv.mlp_w1 = vars.at(prefix + "mlp_w1");
    lv.mlp_b1 = vars.at(prefix + "mlp_b1");
    lv.mlp_w2 = vars.at(prefix + "mlp_w2");
    lv.mlp_b2 = vars.at(prefix + "mlp_b2");
    out.layers.push_back(std::move(lv));
  }
  out.readout.w_u = vars.at("readout.w_u");
  out.readout.v_u = vars.at("readout.v_u");
  out.affinity_weight = vars.at("affinity.a");
  return out;
}

PairTrace forward_pair_traced(Tape& t, const ContextGraph& g_s, const ContextGraph& g_r,
                              const ParamVarSet& params, const ModelConfig& cfg) {
  cfg.validate();
  check_pair_shapes(g_s, g_r, cfg);
  const int n = g_s.node_count;

  PairTrace trace;
  trace.record.s_layers.resize(static_cast<size_t>(cfg.layers));
  trace.record.r_layers.resize(static_cast<size_t>(cfg.layers));

  StateVars ss = lift_states(t, g_s.states);
  StateVars sr = lift_states(t, g_r.states);

  for (int layer = 0; layer < cfg.layers; ++layer) {
    const LayerParamVars& lp = params.layers[static_cast<size_t>(layer)];
    GraphLayerAttention* rec_s = &trace.record.s_layers[static_cast<size_t>(layer)];
    GraphLayerAttention* rec_r = &trace.record.r_layers[static_cast<size_t>(layer)];

    auto intra_s = intra_part_messages(t, ss, g_s, lp, cfg.ablation.intra_part,
                                       cfg.attention_slope, rec_s);
    auto intra_r = intra_part_messages(t, sr, g_r, lp, cfg.ablation.intra_part,
                                       cfg.attention_slope, rec_r);

    std::vector<Var> inter_s, inter_r;
    if (cfg.parts >= 2) {
      inter_s = inter_part_messages(t, ss, g_s, lp, cfg.ablation.inter_part,
                                    cfg.attention_slope, rec_s);
      inter_r = inter_part_messages(t, sr, g_r, lp, cfg.ablation.inter_part,
                                    cfg.attention_slope, rec_r);
    } else {
      // P = 1: the sum over other parts is empty, so the message is zero.
      Var zero_s = t.constant(Matrix(cfg.hidden_dim, n));
      inter_s.assign(1, zero_s);
      inter_r.assign(1, t.constant(Matrix(cfg.hidden_dim, n)));
    }

    Var mu_s = inter_graph_messages(t, ss, sr, g_s.real_mask, g_r.real_mask, lp.w_z,
                                    cfg.ablation.inter_graph, rec_s);
    Var mu_r = inter_graph_messages(t, sr, ss, g_r.real_mask, g_s.real_mask, lp.w_z,
                                    cfg.ablation.inter_graph, rec_r);

    ss = update_nodes(t, ss, intra_s, inter_s, mu_s, g_s, lp);
    sr = update_nodes(t, sr, intra_r, inter_r, mu_r, g_r, lp);
  }

  auto ro_s = readout(t, ss, g_s, params.readout, cfg.ablation.readout_attention,
                      &trace.record.gamma_s, &trace.record.u_s);
  auto ro_r = readout(t, sr, g_r, params.readout, cfg.ablation.readout_attention,
                      &trace.record.gamma_r, &trace.record.u_r);

  trace.h_s = cfg.normalize_embeddings ? normalized_embedding(t, ro_s.embedding)
                                       : ro_s.embedding;
  trace.h_r = cfg.normalize_embeddings ? normalized_embedding(t, ro_r.embedding)
                                       : ro_r.embedding;
  Var diff = t.sub(trace.h_s, trace.h_r);
  trace.pair_distance = t.sum(t.hadamard(diff, diff));
  trace.final_s = ss;
  trace.final_r = sr;
  trace.affinity = affinity(t, ss, sr, params.affinity_weight, cfg.tau);
  trace.sinkhorn = sinkhorn_unrolled(t, trace.affinity, cfg.sinkhorn_train_iters);
  return trace;
}

PairOutput forward_pair(const ContextGraph& g_s, const ContextGraph& g_r,
                        const ParameterSet& params, const ModelConfig& cfg) {
  Tape t;
  ParamVarSet pv = register_params(t, params);
  PairTrace trace = forward_pair_traced(t, g_s, g_r, pv, cfg);

  PairOutput out;
  out.h_s = t.value(trace.h_s);
  out.h_r = t.value(trace.h_r);
  out.final_s = extract_states(t, trace.final_s, cfg.layers);
  out.final_r = extract_states(t, trace.final_r, cfg.layers);
  out.record = trace.record;
  out.pair_distance = t.value(trace.pair_distance)(0, 0);
  if (!out.h_s.all_finite() || !out.h_r.all_finite()) {
    throw NumericError("forward_pair: non-finite embedding");
  }
  SinkhornResult converged =
      sinkhorn(t.value(trace.affinity), cfg.sinkhorn_eval_iters, cfg.sinkhorn_tol);
  out.sinkhorn_s = std::move(converged.values);
  out.sinkhorn_iterations = converged.iterations;
  out.sinkhorn_residual = converged.residual;
  return out;
}

double OptimizerState::lr_for_epoch(int epoch) const {
  double rate = initial_lr;
  for (int milestone : milestones) {
    if (epoch >= milestone) rate *= decay;
  }
  return rate;
}

void OptimizerState::apply(ParameterSet& params, const ad::GradientMap& grads) {
  ++step_count;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
  for (auto& [name, value] : params.entries()) {
    const Matrix& g = grads.at(name);
    Matrix& m1 = moment1[name];
    Matrix& m2 = moment2[name];
    if (m1.empty()) m1 = Matrix(value->rows(), value->cols());
    if (m2.empty()) m2 = Matrix(value->rows(), value->cols());
    for (size_t i = 0; i < value->size(); ++i) {
      double gi = g.values()[i];
      double& mi = m1.values()[i];
      double& vi = m2.values()[i];
      mi = beta1 * mi + (1.0 - beta1) * gi;
      vi = beta2 * vi + (1.0 - beta2) * gi * gi;
      value->values()[i] -= lr * (mi / bc1) / (std::sqrt(vi / bc2) + eps);
    }
  }
}

LossReport train_step(const ContextGraph& g_s, const ContextGraph& g_r,
                      const PairLabels& labels, ParameterSet& params,
                      OptimizerState& opt, const ModelConfig& cfg) {
  Tape t;
  ParamVarSet pv = register_params(t, params);
  PairTrace trace = forward_pair_traced(t, g_s, g_r, pv, cfg);

  Var loss_g = group_pair_loss(t, trace.h_s, trace.h_r, labels.group_label, labels.margin);
  Var total = loss_g;
  double person_value = 0.0;
  double pce_value = 0.0;
  if (labels.positive()) {
    Var loss_p =
        person_pair_loss(t, trace.final_s, trace.final_r, g_s.real_mask, g_r.real_mask, labels);
    Var loss_c =
        permutation_ce(t, trace.sinkhorn, labels.gt_permutation, g_s.real_mask, g_r.real_mask);
    total = t.add(t.add(loss_g, loss_p), loss_c);
    person_value = t.value(loss_p)(0, 0);
    pce_value = t.value(loss_c)(0, 0);
  }
  double group_value = t.value(loss_g)(0, 0);
  if (!std::isfinite(group_value) || !std::isfinite(person_value) || !std::isfinite(pce_value)) {
    std::ostringstream msg;
    msg << "train_step: non-finite loss (group=" << group_value << ", person=" << person_value
        << ", pce=" << pce_value << "); step aborted before the update";
    throw NumericError(msg.str());
  }
  LossReport report = total_loss(group_value, person_value, pce_value);
  ad::GradientMap grads = t.backward(total);
  opt.apply(params, grads);
  return report;
}

double score_group_pair(const ContextGraph& g_s, const ContextGraph& g_r,
                        const ParameterSet& params, const ModelConfig& cfg) {
  return -forward_pair(g_s, g_r, params, cfg).pair_distance;
}

PersonScores score_person_pairs(const ContextGraph& g_s, const ContextGraph& g_r,
                                const ParameterSet& params, const ModelConfig& cfg) {
  PairOutput out = forward_pair(g_s, g_r, params, cfg);
  const int n = g_s.node_count;
  PersonScores scores;
  scores.similarity = Matrix::filled(n, n, std::numeric_limits<double>::lowest());
  for (int i = 0; i < n; ++i) {
    if (!g_s.real_mask[static_cast<size_t>(i)]) continue;
    for (int j = 0; j < n; ++j) {
      if (!g_r.real_mask[static_cast<size_t>(j)]) continue;
      double dist2 = 0.0;
      for (int q = 0; q < cfg.parts; ++q) {
        const Matrix& sp = out.final_s.parts[static_cast<size_t>(q)];
        const Matrix& rp = out.final_r.parts[static_cast<size_t>(q)];
        for (int k = 0; k < sp.rows(); ++k) {
          double d = sp(k, i) - rp(k, j);
          dist2 += d * d;
        }
      }
      scores.similarity(i, j) = -dist2;
    }
  }
  scores.correspondence = std::move(out.sinkhorn_s);
  return scores;
}

PairLabels make_pair_labels(const ContextGraph& s, const ContextGraph& r, double margin) {
  if (s.node_count != r.node_count) {
    throw ContractError("make_pair_labels: graphs must share a node count");
  }
  const int n = s.node_count;
  PairLabels labels;
  labels.group_label = s.group_id == r.group_id ? 1 : -1;
  labels.margin = margin;
  if (labels.positive()) {
    labels.person_labels = Matrix(n, n);
    labels.gt_permutation = Matrix(n, n);
    for (int i = 0; i < n; ++i) {
      if (!s.real_mask[static_cast<size_t>(i)]) continue;
      for (int j = 0; j < n; ++j) {
        if (!r.real_mask[static_cast<size_t>(j)]) continue;
        bool same = s.person_ids[static_cast<size_t>(i)] == r.person_ids[static_cast<size_t>(j)];
        labels.person_labels(i, j) = same ? 1.0 : -1.0;
        labels.gt_permutation(i, j) = same ? 1.0 : 0.0;
      }
    }
  }
  return labels;
}

PreparedPair prepare_pair(const DatasetRecord& a, const DatasetRecord& b,
                          const ModelConfig& cfg) {
  PreparedPair pair;
  ContextGraph ga = build_context_graph(a);
  ContextGraph gb = build_context_graph(b);
  const int n = std::max(ga.node_count, gb.node_count);
  pair.s = pad_to_size(ga, n);
  pair.r = pad_to_size(gb, n);
  pair.labels = make_pair_labels(pair.s, pair.r, cfg.margin);
  return pair;
}

// -- checkpoint ---------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[8] = {'M', 'A', 'C', 'G', 'C', 'K', 'P', 'T'};
constexpr uint32_t kCheckpointVersion = 1;

template <class T>
void write_pod(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
void read_pod(std::ifstream& in, T& v, const std::string& path) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw DataError("load_checkpoint: truncated file '" + path + "'");
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("save_checkpoint: cannot open '" + path + "'");
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  write_pod(out, kCheckpointVersion);
  write_pod(out, ckpt.seed);
  std::string cfg = config_to_json(ckpt.config).dump();
  write_pod(out, static_cast<uint32_t>(cfg.size()));
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));

  auto entries = ckpt.params.entries();
  write_pod(out, static_cast<uint32_t>(entries.size()));
  for (const auto& [name, value] : entries) {
    write_pod(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod(out, static_cast<uint32_t>(value->rows()));
    write_pod(out, static_cast<uint32_t>(value->cols()));
    out.write(reinterpret_cast<const char*>(value->values().data()),
              static_cast<std::streamsize>(value->size() * sizeof(double)));
  }
  if (!out) throw DataError("save_checkpoint: write failure on '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("load_checkpoint: cannot open '" + path + "'");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw DataError("load_checkpoint: '" + path + "' is not a MACG checkpoint");
  }
  uint32_t version = 0;
  read_pod(in, version, path);
  if (version != kCheckpointVersion) {
    throw DataError("load_checkpoint: unsupported format version " + std::to_string(version));
  }
  Checkpoint ckpt;
  read_pod(in, ckpt.seed, path);
  uint32_t cfg_len = 0;
  read_pod(in, cfg_len, path);
  std::string cfg(cfg_len, '\0');
  in.read(cfg.data(), cfg_len);
  if (!in) throw DataError("load_checkpoint: truncated file '" + path + "'");
  try {
    ckpt.config = config_from_json(json::parse(cfg));
  } catch (const json::exception& e) {
    throw DataError(std::string("load_checkpoint: bad config header: ") + e.what());
  }

  ckpt.params = init_params(ckpt.config, ckpt.seed);
  auto entries = ckpt.params.entries();
  uint32_t count = 0;
  read_pod(in, count, path);
  if (count != entries.size()) {
    throw DataError("load_checkpoint: parameter count mismatch");
  }
  for (auto& [name, value] : entries) {
    uint32_t name_len = 0;
    read_pod(in, name_len, path);
    std::string stored(name_len, '\0');
    in.read(stored.data(), name_len);
    if (!in || stored != name) {
      throw DataError("load_checkpoint: parameter order mismatch at '" + stored + "'");
    }
    uint32_t rows = 0, cols = 0;
    read_pod(in, rows, path);
    read_pod(in, cols, path);
    if (static_cast<int>(rows) != value->rows() || static_cast<int>(cols) != value->cols()) {
      throw DataError("load_checkpoint: shape mismatch for '" + name + "'");
    }
    in.read(reinterpret_cast<char*>(value->values().data()),
            static_cast<std::streamsize>(value->size() * sizeof(double)));
    if (!in) throw DataError("load_checkpoint: truncated file '" + path + "'");
  }
  return ckpt;
}

std::string config_to_json_string(const ModelConfig& cfg) { return config_to_json(cfg).dump(); }

ModelConfig config_from_json_string(const std::string& text) {
  try {
    return config_from_json(json::parse(text));
  } catch (const json::exception& e) {
    throw DataError(std::string("config_from_json_string: ") + e.what());
  }
}

// -- training loop ------------------------------------------------------------

TrainResult train_model(const std::vector<DatasetRecord>& records, const ModelConfig& cfg,
                        const TrainSchedule& schedule, uint64_t seed,
                        const std::function<void(const EpochStats&)>& on_epoch) {
  cfg.validate();
  if (records.empty()) throw DataError("train_model: empty dataset");

  std::vector<ContextGraph> graphs;
  graphs.reserve(records.size());
  for (const auto& rec : records) graphs.push_back(build_context_graph(rec));

  std::vector<std::pair<int, int>> positives;
  for (size_t i = 0; i < records.size(); ++i) {
    for (size_t j = i + 1; j < records.size(); ++j) {
      if (records[i].group_id == records[j].group_id) {
        positives.emplace_back(static_cast<int>(i), static_cast<int>(j));
      }
    }
  }
  if (positives.empty()) {
    throw DataError("train_model: no positive pairs (need a group with >= 2 views)");
  }
  bool has_negatives = false;
  for (size_t i = 1; i < records.size() && !has_negatives; ++i) {
    has_negatives = records[i].group_id != records[0].group_id;
  }

  TrainResult result;
  result.params = init_params(cfg, seed);
  OptimizerState opt;
  opt.initial_lr = schedule.initial_lr;
  opt.milestones = schedule.milestones;
  opt.decay = schedule.decay;

  Rng sampler = Rng(seed).fork(1);
  const int record_count = static_cast<int>(records.size());

  for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
    opt.lr = opt.lr_for_epoch(epoch);
    Rng er = sampler.fork(static_cast<uint64_t>(epoch));

    // one positive and one sampled negative per roster slot, 1:1
    std::vector<std::pair<int, int>> steps = positives;
    if (has_negatives) {
      for (size_t k = 0; k < positives.size(); ++k) {
        for (int attempt = 0; attempt < 1000; ++attempt) {
          int i = er.uniform_int(0, record_count - 1);
          int j = er.uniform_int(0, record_count - 1);
          if (records[static_cast<size_t>(i)].group_id !=
              records[static_cast<size_t>(j)].group_id) {
            steps.emplace_back(i, j);
            break;
          }
        }
      }
    }
    er.shuffle(steps);

    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = opt.lr;
    for (const auto& [i, j] : steps) {
      const ContextGraph& ga = graphs[static_cast<size_t>(i)];
      const ContextGraph& gb = graphs[static_cast<size_t>(j)];
      const int n = std::max(ga.node_count, gb.node_count);
      PreparedPair pair;
      pair.s = pad_to_size(ga, n);
      pair.r = pad_to_size(gb, n);
      pair.labels = make_pair_labels(pair.s, pair.r, cfg.margin);
      LossReport report = train_step(pair.s, pair.r, pair.labels, result.params, opt, cfg);
      stats.mean.group += report.group;
      stats.mean.person += report.person;
      stats.mean.pce += report.pce;
      stats.mean.total += report.total;
      ++stats.steps;
    }
    if (stats.steps > 0) {
      stats.mean.group /= stats.steps;
      stats.mean.person /= stats.steps;
      stats.mean.pce /= stats.steps;
      stats.mean.total /= stats.steps;
    }
    result.history.push_back(stats);
    if (on_epoch) on_epoch(stats);
  }
  return result;
}

}  // namespace macg
