#include "macg/attention.hpp"

#include <array>
#include <string>

#include "macg/errors.hpp"

namespace macg {

namespace {

int mask_count(const std::vector<bool>& mask) {
  int n = 0;
  for (bool b : mask) n += b ? 1 : 0;
  return n;
}

// Each row is the mask normalized to sum 1: the mean-pooling fallback weights.
Matrix uniform_rows(const std::vector<bool>& mask, int rows, int repeat = 1) {
  int cnt = mask_count(mask);
  if (cnt == 0) throw ContractError("attention: empty real support");
  int cols = static_cast<int>(mask.size()) * repeat;
  Matrix m(rows, cols);
  double w = 1.0 / (cnt * repeat);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) {
      if (mask[static_cast<size_t>(j) % mask.size()]) m(i, j) = w;
    }
  return m;
}

std::vector<bool> tile_mask(const std::vector<bool>& mask, int repeat) {
  std::vector<bool> out;
  out.reserve(mask.size() * static_cast<size_t>(repeat));
  for (int r = 0; r < repeat; ++r) out.insert(out.end(), mask.begin(), mask.end());
  return out;
}

// e(i, j) = a(0, i) + b(0, j)
Var outer_add(Tape& t, Var row_a, Var row_b) {
  int n = t.value(row_a).cols();
  int m = t.value(row_b).cols();
  Var left = t.matmul(t.transpose(row_a), t.constant(Matrix::filled(1, m, 1.0)));
  Var right = t.matmul(t.constant(Matrix::filled(n, 1, 1.0)), row_b);
  return t.add(left, right);
}

void check_width(const StateVars& states, const Tape& t, Var w, const char* what) {
  if (states.parts.empty()) throw ContractError(std::string(what) + ": no parts");
  int width = t.value(states.parts[0]).rows();
  if (t.value(w).cols() != width) {
    throw DimensionError(std::string(what) + ": projection expects width " +
                         std::to_string(t.value(w).cols()) + ", states have " +
                         std::to_string(width));
  }
}

// Averages the per-head message stacks in place.
std::vector<Var> average_heads(Tape& t, std::vector<std::vector<Var>>& per_head) {
  const size_t heads = per_head.size();
  std::vector<Var> out = per_head[0];
  for (size_t h = 1; h < heads; ++h) {
    for (size_t p = 0; p < out.size(); ++p) out[p] = t.add(out[p], per_head[h][p]);
  }
  if (heads > 1) {
    for (auto& v : out) v = t.scale(v, 1.0 / static_cast<double>(heads));
  }
  return out;
}

}  // namespace

Matrix zero_dummy_rows(Matrix m, const std::vector<bool>& real_mask) {
  for (int i = 0; i < m.rows(); ++i) {
    if (!real_mask[static_cast<size_t>(i)]) {
      for (int j = 0; j < m.cols(); ++j) m(i, j) = 0.0;
    }
  }
  return m;
}

std::vector<Var> intra_part_messages(Tape& t, const StateVars& states,
                                     const ContextGraph& g, const LayerParamVars& p,
                                     bool attention_on, double attention_slope,
                                     GraphLayerAttention* record) {
  check_width(states, t, p.w_e.at(0), "intra_part_messages");
  const int n = g.node_count;
  const int parts = states.part_count();
  const int heads = static_cast<int>(p.w_e.size());
  const int dp = t.value(p.w_e[0]).rows();

  if (record) {
    record->intra_alpha.assign(static_cast<size_t>(heads), {});
    record->intra_e.assign(static_cast<size_t>(heads), {});
  }

  std::vector<std::vector<Var>> per_head(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Var a1, a2;
    if (attention_on) {
      a1 = t.transpose(t.slice_rows(p.a_e[static_cast<size_t>(h)], 0, dp));
      a2 = t.transpose(t.slice_rows(p.a_e[static_cast<size_t>(h)], dp, dp));
    }
    for (int q = 0; q < parts; ++q) {
      Var proj = t.matmul(p.w_e[static_cast<size_t>(h)], states.parts[static_cast<size_t>(q)]);
      Var alpha;
      if (attention_on) {
        Var e = t.leaky_relu(outer_add(t, t.matmul(a1, proj), t.matmul(a2, proj)),
                             attention_slope);
        alpha = t.masked_softmax_rows(e, g.real_mask);
        if (record) {
          record->intra_e[static_cast<size_t>(h)].push_back(
              zero_dummy_rows(t.value(e), g.real_mask));
        }
      } else {
        alpha = t.constant(uniform_rows(g.real_mask, n));
        if (record) record->intra_e[static_cast<size_t>(h)].push_back(Matrix(n, n));
      }
      if (record) {
        record->intra_alpha[static_cast<size_t>(h)].push_back(
            zero_dummy_rows(t.value(alpha), g.real_mask));
      }
      Var msg = t.mask_cols(t.matmul(proj, t.transpose(alpha)), g.real_mask);
      per_head[static_cast<size_t>(h)].push_back(msg);
    }
  }
  return average_heads(t, per_head);
}

std::vector<Var> inter_part_messages(Tape& t, const StateVars& states,
                                     const ContextGraph& g, const LayerParamVars& p,
                                     bool attention_on, double attention_slope,
                                     GraphLayerAttention* record) {
  check_width(states, t, p.w_e.at(0), "inter_part_messages");
  const int parts = states.part_count();
  if (parts < 2) {
    throw ContractError("inter_part_messages: undefined for P < 2");
  }
  const int n = g.node_count;
  const int heads = static_cast<int>(p.w_e.size());
  const int dp = t.value(p.w_e[0]).rows();
  const std::vector<bool> joint_mask = tile_mask(g.real_mask, parts - 1);

  if (record) {
    record->inter_alpha.assign(static_cast<size_t>(heads), {});
    record->inter_e.assign(static_cast<size_t>(heads), {});
  }

  std::vector<std::vector<Var>> per_head(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    std::vector<Var> proj(static_cast<size_t>(parts));
    std::vector<Var> s1(static_cast<size_t>(parts)), s2(static_cast<size_t>(parts));
    Var a1, a2;
    if (attention_on) {
      a1 = t.transpose(t.slice_rows(p.a_e[static_cast<size_t>(h)], 0, dp));
      a2 = t.transpose(t.slice_rows(p.a_e[static_cast<size_t>(h)], dp, dp));
    }
    for (int q = 0; q < parts; ++q) {
      proj[static_cast<size_t>(q)] =
          t.matmul(p.w_e[static_cast<size_t>(h)], states.parts[static_cast<size_t>(q)]);
      if (attention_on) {
        s1[static_cast<size_t>(q)] = t.matmul(a1, proj[static_cast<size_t>(q)]);
        s2[static_cast<size_t>(q)] = t.matmul(a2, proj[static_cast<size_t>(q)]);
      }
    }
    for (int pt = 0; pt < parts; ++pt) {
      std::vector<Var> value_blocks;
      for (int q = 0; q < parts; ++q) {
        if (q != pt) value_blocks.push_back(proj[static_cast<size_t>(q)]);
      }
      Var values = t.concat(value_blocks, 1);  // d' x (P-1)N
      Var alpha;
      if (attention_on) {
        std::vector<Var> logit_blocks;
        for (int q = 0; q < parts; ++q) {
          if (q != pt) {
            logit_blocks.push_back(
                outer_add(t, s1[static_cast<size_t>(pt)], s2[static_cast<size_t>(q)]));
          }
        }
        Var e = t.leaky_relu(t.concat(logit_blocks, 1), attention_slope);
        alpha = t.masked_softmax_rows(e, joint_mask);
        if (record) {
          record->inter_e[static_cast<size_t>(h)].push_back(
              zero_dummy_rows(t.value(e), g.real_mask));
        }
      } else {
        alpha = t.constant(uniform_rows(g.real_mask, n, parts - 1));
        if (record) {
          record->inter_e[static_cast<size_t>(h)].push_back(Matrix(n, (parts - 1) * n));
        }
      }
      if (record) {
        record->inter_alpha[static_cast<size_t>(h)].push_back(
            zero_dummy_rows(t.value(alpha), g.real_mask));
      }
      Var msg = t.mask_cols(t.matmul(values, t.transpose(alpha)), g.real_mask);
      per_head[static_cast<size_t>(h)].push_back(msg);
    }
  }
  return average_heads(t, per_head);
}

Var inter_graph_messages(Tape& t, const StateVars& recipient, const StateVars& partner,
                         const std::vector<bool>& recipient_mask,
                         const std::vector<bool>& partner_mask, Var w_z,
                         bool attention_on, GraphLayerAttention* record) {
  check_width(recipient, t, w_z, "inter_graph_messages");
  check_width(partner, t, w_z, "inter_graph_messages");
  const int parts = recipient.part_count();
  if (partner.part_count() != parts) {
    throw DimensionError("inter_graph_messages: part count mismatch");
  }

  std::vector<Var> proj_r(static_cast<size_t>(parts)), proj_p(static_cast<size_t>(parts));
  for (int q = 0; q < parts; ++q) {
    proj_r[static_cast<size_t>(q)] = t.matmul(w_z, recipient.parts[static_cast<size_t>(q)]);
    proj_p[static_cast<size_t>(q)] = t.matmul(w_z, partner.parts[static_cast<size_t>(q)]);
  }
  // Node-level projections are the per-part projections stacked, so the inner
  // product decomposes as a sum of per-part inner products.
  Var stack_r = t.concat(proj_r, 0);
  Var stack_p = t.concat(proj_p, 0);
  Var z = t.matmul(t.transpose(stack_r), stack_p);  // N_recipient x N_partner

  Var beta = attention_on
                 ? t.masked_softmax_rows(z, partner_mask)
                 : t.constant(uniform_rows(partner_mask, t.value(z).rows()));
  if (record) {
    record->z = zero_dummy_rows(t.value(z), recipient_mask);
    record->beta = zero_dummy_rows(t.value(beta), recipient_mask);
  }

  Var part_sum = proj_p[0];
  for (int q = 1; q < parts; ++q) part_sum = t.add(part_sum, proj_p[static_cast<size_t>(q)]);
  return t.mask_cols(t.matmul(part_sum, t.transpose(beta)), recipient_mask);
}

StateVars update_nodes(Tape& t, const StateVars& prev, const std::vector<Var>& intra,
                       const std::vector<Var>& inter_part, Var inter_graph,
                       const ContextGraph& g, const LayerParamVars& p) {
  const int parts = prev.part_count();
  if (static_cast<int>(intra.size()) != parts || static_cast<int>(inter_part.size()) != parts) {
    throw DimensionError("update_nodes: message bundle does not match part count");
  }
  Var ones_row = t.constant(Matrix::filled(1, g.node_count, 1.0));
  StateVars out;
  out.parts.reserve(static_cast<size_t>(parts));
  for (int q = 0; q < parts; ++q) {
    std::array<Var, 4> blocks{prev.parts[static_cast<size_t>(q)], intra[static_cast<size_t>(q)],
                              inter_part[static_cast<size_t>(q)], inter_graph};
    Var x = t.concat(blocks, 0);
    Var hidden = t.relu(t.add(t.matmul(p.mlp_w1, x), t.matmul(p.mlp_b1, ones_row)));
    Var next = t.add(t.matmul(p.mlp_w2, hidden), t.matmul(p.mlp_b2, ones_row));
    out.parts.push_back(t.mask_cols(next, g.real_mask));
  }
  return out;
}

ReadoutResult readout(Tape& t, const StateVars& final_states, const ContextGraph& g,
                      const ReadoutParamVars& p, bool attention_on,
                      Matrix* gamma_record, Matrix* logit_record) {
  Var node_feats = t.concat(final_states.parts, 0);  // (P*d) x N
  Var projected = t.matmul(p.w_u, node_feats);       // embed x N
  Var logits = t.matmul(t.transpose(p.v_u), projected);  // 1 x N
  Var gamma = attention_on ? t.masked_softmax_rows(logits, g.real_mask)
                           : t.constant(uniform_rows(g.real_mask, 1));
  if (gamma_record) *gamma_record = t.value(gamma);
  if (logit_record) *logit_record = t.value(logits);
  return {t.matmul(projected, t.transpose(gamma)), gamma, logits};
}

}  // namespace macg
