#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>

#include "macg/attention.hpp"
#include "macg/errors.hpp"
#include "macg/gradcheck.hpp"
#include "macg/graph.hpp"
#include "macg/rng.hpp"
#include "oracles.hpp"

using macg::AblationSwitches;
using macg::build_context_graph;
using macg::ContextGraph;
using macg::ContractError;
using macg::GraphLayerAttention;
using macg::LayerParamVars;
using macg::pad_to_size;
using macg::PartFeatureSet;
using macg::PersonParts;
using macg::ReadoutParamVars;
using macg::Rng;
using macg::StateVars;
using macg::ad::Matrix;
using macg::ad::Tape;
using macg::ad::Var;

namespace {

constexpr double kSlope = 0.2;

ContextGraph random_graph(Rng& rng, int persons, int parts, int dim) {
  PartFeatureSet set;
  set.group_id = "g";
  set.view_id = "v";
  for (int i = 0; i < persons; ++i) {
    PersonParts person;
    person.person_id = "p" + std::to_string(i);
    for (int q = 0; q < parts; ++q) {
      std::vector<double> feat(static_cast<size_t>(dim));
      for (auto& v : feat) v = rng.uniform(-1.0, 1.0);
      person.parts.push_back(std::move(feat));
    }
    set.persons.push_back(std::move(person));
  }
  return build_context_graph(set);
}

// identical across nodes; parts keep distinct vectors
ContextGraph identical_feature_graph(Rng& rng, int persons, int parts, int dim) {
  ContextGraph g = random_graph(rng, 1, parts, dim);
  PartFeatureSet set;
  set.group_id = "g";
  set.view_id = "v";
  for (int i = 0; i < persons; ++i) {
    PersonParts person;
    person.person_id = "p" + std::to_string(i);
    for (int q = 0; q < parts; ++q) {
      std::vector<double> feat(static_cast<size_t>(dim));
      for (int k = 0; k < dim; ++k) feat[static_cast<size_t>(k)] = g.states.parts[q](k, 0);
      person.parts.push_back(std::move(feat));
    }
    set.persons.push_back(std::move(person));
  }
  return build_context_graph(set);
}

// one shared vector for every (node, part): the joint inter-part support is
// fully symmetric
ContextGraph constant_feature_graph(Rng& rng, int persons, int parts, int dim) {
  std::vector<double> shared(static_cast<size_t>(dim));
  for (auto& v : shared) v = rng.uniform(-1.0, 1.0);
  PartFeatureSet set;
  set.group_id = "g";
  set.view_id = "v";
  for (int i = 0; i < persons; ++i) {
    PersonParts person;
    person.person_id = "p" + std::to_string(i);
    person.parts.assign(static_cast<size_t>(parts), shared);
    set.persons.push_back(std::move(person));
  }
  return build_context_graph(set);
}

struct PlainLayer {
  std::vector<Matrix> w_e, a_e;
  Matrix w_z, mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

PlainLayer random_layer(Rng& rng, int d_in, int d, int heads = 1) {
  PlainLayer layer;
  for (int h = 0; h < heads; ++h) {
    layer.w_e.push_back(oracle::random_matrix(rng, d, d_in));
    layer.a_e.push_back(oracle::random_matrix(rng, 2 * d, 1));
  }
  layer.w_z = oracle::random_matrix(rng, d, d_in);
  layer.mlp_w1 = oracle::random_matrix(rng, d, d_in + 3 * d);
  layer.mlp_b1 = oracle::random_matrix(rng, d, 1);
  layer.mlp_w2 = oracle::random_matrix(rng, d, d);
  layer.mlp_b2 = oracle::random_matrix(rng, d, 1);
  return layer;
}

LayerParamVars lift_layer(Tape& t, const PlainLayer& layer) {
  LayerParamVars out;
  for (size_t h = 0; h < layer.w_e.size(); ++h) {
    out.w_e.push_back(t.constant(layer.w_e[h]));
    out.a_e.push_back(t.constant(layer.a_e[h]));
  }
  out.w_z = t.constant(layer.w_z);
  out.mlp_w1 = t.constant(layer.mlp_w1);
  out.mlp_b1 = t.constant(layer.mlp_b1);
  out.mlp_w2 = t.constant(layer.mlp_w2);
  out.mlp_b2 = t.constant(layer.mlp_b2);
  return out;
}

StateVars lift(Tape& t, const ContextGraph& g) {
  StateVars s;
  for (const auto& part : g.states.parts) s.parts.push_back(t.constant(part));
  return s;
}

double feature_diff(const macg::ad::Matrix& column_matrix, int col, const oracle::Feature& f) {
  double worst = 0.0;
  for (int k = 0; k < column_matrix.rows(); ++k) {
    worst = std::max(worst, std::fabs(column_matrix(k, col) - f[static_cast<size_t>(k)]));
  }
  return worst;
}

}  // namespace

TEST_CASE("intra-part attention: identical features give uniform weights") {
  Rng rng(3);
  const int n = 4;
  ContextGraph g = identical_feature_graph(rng, n, 2, 5);
  PlainLayer layer = random_layer(rng, 5, 3);
  Tape t;
  GraphLayerAttention rec;
  auto msgs = macg::intra_part_messages(t, lift(t, g), g, lift_layer(t, layer), true, kSlope, &rec);
  for (int p = 0; p < 2; ++p) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        CHECK(rec.intra_alpha[0][static_cast<size_t>(p)](i, j) == doctest::Approx(1.0 / n));
      }
    // message equals the shared projected feature
    oracle::Feature proj = oracle::matvec(layer.w_e[0], oracle::to_part_states(g.states)[static_cast<size_t>(p)][0]);
    for (int i = 0; i < n; ++i) {
      CHECK(feature_diff(t.value(msgs[static_cast<size_t>(p)]), i, proj) < 1e-12);
    }
  }
}

TEST_CASE("intra-part attention: singleton graph") {
  Rng rng(5);
  ContextGraph g = random_graph(rng, 1, 2, 4);
  PlainLayer layer = random_layer(rng, 4, 3);
  Tape t;
  GraphLayerAttention rec;
  auto msgs = macg::intra_part_messages(t, lift(t, g), g, lift_layer(t, layer), true, kSlope, &rec);
  for (int p = 0; p < 2; ++p) {
    CHECK(rec.intra_alpha[0][static_cast<size_t>(p)](0, 0) == doctest::Approx(1.0));
    oracle::Feature proj = oracle::matvec(layer.w_e[0], oracle::to_part_states(g.states)[static_cast<size_t>(p)][0]);
    CHECK(feature_diff(t.value(msgs[static_cast<size_t>(p)]), 0, proj) < 1e-12);
  }
}

TEST_CASE("intra-part attention matches the loop oracle") {
  Rng rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    int n = rng.uniform_int(2, 3);
    int parts = rng.uniform_int(1, 3);
    int dim = rng.uniform_int(2, 4);
    ContextGraph g = random_graph(rng, n, parts, dim);
    PlainLayer layer = random_layer(rng, dim, 3);
    Tape t;
    auto msgs = macg::intra_part_messages(t, lift(t, g), g, lift_layer(t, layer), true, kSlope,
                                          nullptr);
    auto expected = oracle::intra_messages(oracle::to_part_states(g.states), g.real_mask,
                                           layer.w_e[0], layer.a_e[0], kSlope);
    for (int p = 0; p < parts; ++p)
      for (int i = 0; i < n; ++i) {
        CHECK(feature_diff(t.value(msgs[static_cast<size_t>(p)]), i,
                           expected[static_cast<size_t>(p)][static_cast<size_t>(i)]) < 1e-10);
      }
  }
}

TEST_CASE("inter-part attention: identical features give 1/(N(P-1))") {
  Rng rng(11);
  const int n = 3, parts = 3;
  ContextGraph g = constant_feature_graph(rng, n, parts, 4);
  PlainLayer layer = random_layer(rng, 4, 3);
  Tape t;
  GraphLayerAttention rec;
  macg::inter_part_messages(t, lift(t, g), g, lift_layer(t, layer), true, kSlope, &rec);
  for (int p = 0; p < parts; ++p) {
    const Matrix& alpha = rec.inter_alpha[0][static_cast<size_t>(p)];
    REQUIRE(alpha.cols() == n * (parts - 1));
    for (int i = 0; i < n; ++i)
      for (int c = 0; c < alpha.cols(); ++c) {
        CHECK(alpha(i, c) == doctest::Approx(1.0 / (n * (parts - 1))));
      }
  }
}

TEST_CASE("inter-part attention with P=2 attends only across parts") {
  Rng rng(13);
  ContextGraph g = random_graph(rng, 2, 2, 4);
  PlainLayer layer = random_layer(rng, 4, 3);
  Tape t;
  GraphLayerAttention rec;
  auto msgs = macg::inter_part_messages(t, lift(t, g), g, lift_layer(t, layer), true, kSlope, &rec);
  // support of part 0 is exactly the part-1 features: one block of width N
  REQUIRE(rec.inter_alpha[0][0].cols() == 2);
  auto states = oracle::to_part_states(g.states);
  auto expected = oracle::inter_part_messages(states, g.real_mask, layer.w_e[0], layer.a_e[0], kSlope);
  for (int p = 0; p < 2; ++p)
    for (int i = 0; i < 2; ++i) {
      CHECK(feature_diff(t.value(msgs[static_cast<size_t>(p)]), i,
                         expected[static_cast<size_t>(p)][static_cast<size_t>(i)]) < 1e-10);
    }
}

TEST_CASE("inter-part attention matches the loop oracle and rejects P<2") {
  Rng rng(17);
  ContextGraph g = random_graph(rng, 2, 3, 4);
  PlainLayer layer = random_layer(rng, 4, 3);
  {
    Tape t;
    auto msgs = macg::inter_part_messages(t, lift(t, g), g, lift_layer(t, layer), true, kSlope,
                                          nullptr);
    auto expected = oracle::inter_part_messages(oracle::to_part_states(g.states), g.real_mask,
                                                layer.w_e[0], layer.a_e[0], kSlope);
    for (int p = 0; p < 3; ++p)
      for (int i = 0; i < 2; ++i) {
        CHECK(feature_diff(t.value(msgs[static_cast<size_t>(p)]), i,
                           expected[static_cast<size_t>(p)][static_cast<size_t>(i)]) < 1e-10);
      }
  }
  {
    ContextGraph single_part = random_graph(rng, 2, 1, 4);
    PlainLayer lp = random_layer(rng, 4, 3);
    Tape t;
    CHECK_THROWS_AS(macg::inter_part_messages(t, lift(t, single_part), single_part,
                                              lift_layer(t, lp), true, kSlope, nullptr),
                    ContractError);
  }
}

TEST_CASE("inter-graph attention: uniform, singleton, and oracle cases") {
  Rng rng(19);
  {
    // identical partner nodes -> beta = 1/N_r
    ContextGraph gs = random_graph(rng, 2, 2, 4);
    ContextGraph gr = identical_feature_graph(rng, 3, 2, 4);
    PlainLayer layer = random_layer(rng, 4, 3);
    Tape t;
    GraphLayerAttention rec;
    macg::inter_graph_messages(t, lift(t, gs), lift(t, gr), gs.real_mask, gr.real_mask,
                               t.constant(layer.w_z), true, &rec);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 3; ++j) CHECK(rec.beta(i, j) == doctest::Approx(1.0 / 3));
  }
  {
    // single real partner node: beta = [1], message = sum of its projected parts
    ContextGraph gs = random_graph(rng, 2, 2, 4);
    ContextGraph gr = pad_to_size(random_graph(rng, 1, 2, 4), 2);
    PlainLayer layer = random_layer(rng, 4, 3);
    Tape t;
    GraphLayerAttention rec;
    Var msg = macg::inter_graph_messages(t, lift(t, gs), lift(t, gr), gs.real_mask, gr.real_mask,
                                         t.constant(layer.w_z), true, &rec);
    CHECK(rec.beta(0, 0) == doctest::Approx(1.0));
    CHECK(rec.beta(0, 1) == 0.0);
    auto partner = oracle::to_part_states(gr.states);
    oracle::Feature sum(3, 0.0);
    for (int q = 0; q < 2; ++q) {
      oracle::Feature proj = oracle::matvec(layer.w_z, partner[static_cast<size_t>(q)][0]);
      for (size_t k = 0; k < sum.size(); ++k) sum[k] += proj[k];
    }
    for (int i = 0; i < 2; ++i) CHECK(feature_diff(t.value(msg), i, sum) < 1e-12);
  }
  {
    // N_s=2, N_r=3 random vs the loop oracle
    ContextGraph gs = random_graph(rng, 2, 3, 4);
    ContextGraph gr = random_graph(rng, 3, 3, 4);
    PlainLayer layer = random_layer(rng, 4, 3);
    Tape t;
    Var msg = macg::inter_graph_messages(t, lift(t, gs), lift(t, gr), gs.real_mask, gr.real_mask,
                                         t.constant(layer.w_z), true, nullptr);
    auto expected = oracle::inter_graph_messages(oracle::to_part_states(gs.states),
                                                 oracle::to_part_states(gr.states), gs.real_mask,
                                                 gr.real_mask, layer.w_z);
    for (int i = 0; i < 2; ++i) {
      CHECK(feature_diff(t.value(msg), i, expected[static_cast<size_t>(i)]) < 1e-10);
    }
  }
}

TEST_CASE("update_nodes: constructed identities, disconnection, and oracle") {
  Rng rng(23);
  const int n = 3, parts = 2, d = 3;
  // non-negative states so the rectifier passes them through unchanged
  ContextGraph g = random_graph(rng, n, parts, d);
  for (auto& part : g.states.parts)
    for (auto& v : part.values()) v = std::fabs(v);

  PlainLayer layer = random_layer(rng, d, d);
  {
    // W1 = [I 0 0 0], W2 = I, zero biases: output equals previous state
    PlainLayer identity = layer;
    identity.mlp_w1 = Matrix(d, d + 3 * d);
    for (int i = 0; i < d; ++i) identity.mlp_w1(i, i) = 1.0;
    identity.mlp_w2 = Matrix::identity(d);
    identity.mlp_b1 = Matrix(d, 1);
    identity.mlp_b2 = Matrix(d, 1);
    Tape t;
    StateVars prev = lift(t, g);
    std::vector<Var> zero_msgs(static_cast<size_t>(parts), t.constant(Matrix(d, n)));
    StateVars out = macg::update_nodes(t, prev, zero_msgs, zero_msgs, t.constant(Matrix(d, n)), g,
                                       lift_layer(t, identity));
    for (int p = 0; p < parts; ++p) {
      CHECK(max_abs_diff(t.value(out.parts[static_cast<size_t>(p)]), g.states.parts[static_cast<size_t>(p)]) == 0.0);
    }
  }
  {
    // zero weight on the message blocks: output ignores the messages entirely
    PlainLayer gated = layer;
    for (int i = 0; i < d; ++i)
      for (int j = d; j < 4 * d; ++j) gated.mlp_w1(i, j) = 0.0;
    Tape t;
    StateVars prev = lift(t, g);
    std::vector<Var> zeros(static_cast<size_t>(parts), t.constant(Matrix(d, n)));
    std::vector<Var> noise;
    for (int p = 0; p < parts; ++p) noise.push_back(t.constant(oracle::random_matrix(rng, d, n)));
    StateVars quiet = macg::update_nodes(t, prev, zeros, zeros, t.constant(Matrix(d, n)), g,
                                         lift_layer(t, gated));
    StateVars loud = macg::update_nodes(t, prev, noise, noise,
                                        t.constant(oracle::random_matrix(rng, d, n)), g,
                                        lift_layer(t, gated));
    for (int p = 0; p < parts; ++p) {
      CHECK(max_abs_diff(t.value(quiet.parts[static_cast<size_t>(p)]),
                         t.value(loud.parts[static_cast<size_t>(p)])) == 0.0);
    }
  }
  {
    // random case against the loop oracle
    Tape t;
    StateVars prev = lift(t, g);
    std::vector<Matrix> intra_v, inter_v;
    std::vector<Var> intra, inter;
    for (int p = 0; p < parts; ++p) {
      intra_v.push_back(oracle::random_matrix(rng, d, n));
      inter_v.push_back(oracle::random_matrix(rng, d, n));
      intra.push_back(t.constant(intra_v.back()));
      inter.push_back(t.constant(inter_v.back()));
    }
    Matrix mu_v = oracle::random_matrix(rng, d, n);
    StateVars out = macg::update_nodes(t, prev, intra, inter, t.constant(mu_v), g,
                                       lift_layer(t, layer));
    macg::NodeStates intra_states{1, intra_v}, inter_states{1, inter_v};
    macg::NodeStates mu_states{1, {mu_v}};
    auto expected = oracle::update_nodes(
        oracle::to_part_states(g.states), oracle::to_part_states(intra_states),
        oracle::to_part_states(inter_states), oracle::to_part_states(mu_states)[0], g.real_mask,
        layer.mlp_w1, layer.mlp_b1, layer.mlp_w2, layer.mlp_b2);
    for (int p = 0; p < parts; ++p)
      for (int i = 0; i < n; ++i) {
        CHECK(feature_diff(t.value(out.parts[static_cast<size_t>(p)]), i,
                           expected[static_cast<size_t>(p)][static_cast<size_t>(i)]) < 1e-10);
      }
  }
}

TEST_CASE("readout: singleton, identical nodes, and oracle") {
  Rng rng(29);
  const int parts = 2, d = 3, embed = 4;
  Matrix w_u = oracle::random_matrix(rng, embed, parts * d);
  Matrix v_u = oracle::random_matrix(rng, embed, 1);
  {
    ContextGraph g = pad_to_size(random_graph(rng, 1, parts, d), 3);
    Tape t;
    Matrix gamma;
    ReadoutParamVars rp{t.constant(w_u), t.constant(v_u)};
    auto result = macg::readout(t, lift(t, g), g, rp, true, &gamma, nullptr);
    CHECK(gamma(0, 0) == doctest::Approx(1.0));
    CHECK(gamma(0, 1) == 0.0);
    auto expected = oracle::readout(oracle::to_part_states(g.states), g.real_mask, w_u, v_u);
    for (int k = 0; k < embed; ++k) {
      CHECK(t.value(result.embedding)(k, 0) == doctest::Approx(expected[static_cast<size_t>(k)]));
    }
  }
  {
    ContextGraph g = identical_feature_graph(rng, 4, parts, d);
    Tape t;
    Matrix gamma;
    ReadoutParamVars rp{t.constant(w_u), t.constant(v_u)};
    macg::readout(t, lift(t, g), g, rp, true, &gamma, nullptr);
    for (int i = 0; i < 4; ++i) CHECK(gamma(0, i) == doctest::Approx(0.25));
  }
  {
    ContextGraph g = random_graph(rng, 3, parts, d);
    Tape t;
    ReadoutParamVars rp{t.constant(w_u), t.constant(v_u)};
    auto result = macg::readout(t, lift(t, g), g, rp, true, nullptr, nullptr);
    auto expected = oracle::readout(oracle::to_part_states(g.states), g.real_mask, w_u, v_u);
    for (int k = 0; k < embed; ++k) {
      CHECK(std::fabs(t.value(result.embedding)(k, 0) - expected[static_cast<size_t>(k)]) < 1e-10);
    }
  }
}

TEST_CASE("attention distributions: normalized over real support, zero on dummies") {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    int real = rng.uniform_int(1, 4);
    int padded = real + rng.uniform_int(1, 3);
    int parts = rng.uniform_int(2, 3);
    ContextGraph g = pad_to_size(random_graph(rng, real, parts, 4), padded);
    PlainLayer layer = random_layer(rng, 4, 3);
    Tape t;
    GraphLayerAttention rec;
    macg::intra_part_messages(t, lift(t, g), g, lift_layer(t, layer), true, kSlope, &rec);
    macg::inter_part_messages(t, lift(t, g), g, lift_layer(t, layer), true, kSlope, &rec);
    for (int p = 0; p < parts; ++p) {
      for (int i = 0; i < padded; ++i) {
        double row_sum = 0.0;
        for (int j = 0; j < padded; ++j) {
          double a = rec.intra_alpha[0][static_cast<size_t>(p)](i, j);
          CHECK(a >= 0.0);
          if (!g.real_mask[static_cast<size_t>(j)]) CHECK(a == 0.0);
          row_sum += a;
        }
        if (g.real_mask[static_cast<size_t>(i)]) {
          CHECK(std::fabs(row_sum - 1.0) < 1e-6);
        } else {
          CHECK(row_sum == 0.0);
        }
        double joint_sum = 0.0;
        const Matrix& joint = rec.inter_alpha[0][static_cast<size_t>(p)];
        for (int c = 0; c < joint.cols(); ++c) {
          double a = joint(i, c);
          CHECK(a >= 0.0);
          if (!g.real_mask[static_cast<size_t>(c % padded)]) CHECK(a == 0.0);
          joint_sum += a;
        }
        if (g.real_mask[static_cast<size_t>(i)]) CHECK(std::fabs(joint_sum - 1.0) < 1e-6);
      }
    }
  }
}

TEST_CASE("padding neutrality at the message level") {
  Rng rng(37);
  ContextGraph g = random_graph(rng, 3, 2, 4);
  ContextGraph padded = pad_to_size(g, 6);
  PlainLayer layer = random_layer(rng, 4, 3);

  Tape t;
  auto base = macg::intra_part_messages(t, lift(t, g), g, lift_layer(t, layer), true, kSlope,
                                        nullptr);
  auto wide = macg::intra_part_messages(t, lift(t, padded), padded, lift_layer(t, layer), true,
                                        kSlope, nullptr);
  for (int p = 0; p < 2; ++p)
    for (int i = 0; i < 3; ++i)
      for (int k = 0; k < 3; ++k) {
        CHECK(std::fabs(t.value(base[static_cast<size_t>(p)])(k, i) -
                        t.value(wide[static_cast<size_t>(p)])(k, i)) < 1e-5);
      }
  // dummy message columns are exactly zero
  for (int p = 0; p < 2; ++p)
    for (int i = 3; i < 6; ++i)
      for (int k = 0; k < 3; ++k) CHECK(t.value(wide[static_cast<size_t>(p)])(k, i) == 0.0);
}

TEST_CASE("permutation equivariance of messages and readout invariance") {
  Rng rng(41);
  const int n = 4, parts = 2, dim = 4;
  ContextGraph g = random_graph(rng, n, parts, dim);
  std::vector<int> perm{2, 0, 3, 1};
  PartFeatureSet permuted_set;
  permuted_set.group_id = "g";
  permuted_set.view_id = "v";
  for (int i = 0; i < n; ++i) {
    PersonParts person;
    person.person_id = "p" + std::to_string(perm[static_cast<size_t>(i)]);
    for (int q = 0; q < parts; ++q) {
      std::vector<double> feat(static_cast<size_t>(dim));
      for (int k = 0; k < dim; ++k) feat[static_cast<size_t>(k)] = g.states.parts[q](k, perm[static_cast<size_t>(i)]);
      person.parts.push_back(std::move(feat));
    }
    permuted_set.persons.push_back(std::move(person));
  }
  ContextGraph gp = build_context_graph(permuted_set);
  PlainLayer layer = random_layer(rng, dim, 3);
  Matrix w_u = oracle::random_matrix(rng, 3, parts * dim);
  Matrix v_u = oracle::random_matrix(rng, 3, 1);

  Tape t;
  auto base = macg::intra_part_messages(t, lift(t, g), g, lift_layer(t, layer), true, kSlope, nullptr);
  auto perm_msgs = macg::intra_part_messages(t, lift(t, gp), gp, lift_layer(t, layer), true, kSlope, nullptr);
  for (int p = 0; p < parts; ++p)
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < 3; ++k) {
        CHECK(std::fabs(t.value(perm_msgs[static_cast<size_t>(p)])(k, i) -
                        t.value(base[static_cast<size_t>(p)])(k, perm[static_cast<size_t>(i)])) < 1e-6);
      }

  ReadoutParamVars rp{t.constant(w_u), t.constant(v_u)};
  auto ro_base = macg::readout(t, lift(t, g), g, rp, true, nullptr, nullptr);
  auto ro_perm = macg::readout(t, lift(t, gp), gp, rp, true, nullptr, nullptr);
  CHECK(max_abs_diff(t.value(ro_base.embedding), t.value(ro_perm.embedding)) < 1e-6);
}

TEST_CASE("multi-head path with identical heads matches single head") {
  Rng rng(43);
  ContextGraph g = random_graph(rng, 3, 2, 4);
  PlainLayer one = random_layer(rng, 4, 3, 1);
  PlainLayer two = one;
  two.w_e.push_back(one.w_e[0]);
  two.a_e.push_back(one.a_e[0]);

  Tape t;
  auto single = macg::intra_part_messages(t, lift(t, g), g, lift_layer(t, one), true, kSlope, nullptr);
  auto dual = macg::intra_part_messages(t, lift(t, g), g, lift_layer(t, two), true, kSlope, nullptr);
  auto single_ip = macg::inter_part_messages(t, lift(t, g), g, lift_layer(t, one), true, kSlope, nullptr);
  auto dual_ip = macg::inter_part_messages(t, lift(t, g), g, lift_layer(t, two), true, kSlope, nullptr);
  for (int p = 0; p < 2; ++p) {
    CHECK(max_abs_diff(t.value(single[static_cast<size_t>(p)]), t.value(dual[static_cast<size_t>(p)])) < 1e-12);
    CHECK(max_abs_diff(t.value(single_ip[static_cast<size_t>(p)]), t.value(dual_ip[static_cast<size_t>(p)])) < 1e-12);
  }
}

TEST_CASE("disabled attention falls back to masked mean pooling") {
  Rng rng(47);
  ContextGraph g = pad_to_size(random_graph(rng, 3, 2, 4), 4);
  PlainLayer layer = random_layer(rng, 4, 3);
  Tape t;
  GraphLayerAttention rec;
  auto msgs = macg::intra_part_messages(t, lift(t, g), g, lift_layer(t, layer), false, kSlope, &rec);
  for (int p = 0; p < 2; ++p) {
    // uniform over the three real nodes
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        CHECK(rec.intra_alpha[0][static_cast<size_t>(p)](i, j) == doctest::Approx(1.0 / 3));
      }
    // message = mean of projected real features
    auto states = oracle::to_part_states(g.states);
    oracle::Feature mean(3, 0.0);
    for (int j = 0; j < 3; ++j) {
      oracle::Feature proj = oracle::matvec(layer.w_e[0], states[static_cast<size_t>(p)][static_cast<size_t>(j)]);
      for (size_t k = 0; k < mean.size(); ++k) mean[k] += proj[k] / 3.0;
    }
    for (int i = 0; i < 3; ++i) {
      CHECK(feature_diff(t.value(msgs[static_cast<size_t>(p)]), i, mean) < 1e-12);
    }
  }
}

TEST_CASE("attention ops pass grad_check at 1e-4") {
  Rng rng(53);
  const int n = 3, parts = 2, dim = 3, d = 3;
  ContextGraph g = pad_to_size(random_graph(rng, n, parts, dim), n + 1);
  ContextGraph partner = pad_to_size(random_graph(rng, 2, parts, dim), n + 1);
  Matrix weigh = oracle::random_matrix(rng, d, n + 1);

  macg::ad::NamedParams params{{"w_e", oracle::random_matrix(rng, d, dim)},
                               {"a_e", oracle::random_matrix(rng, 2 * d, 1)},
                               {"w_z", oracle::random_matrix(rng, d, dim)},
                               {"mlp_w1", oracle::random_matrix(rng, d, dim + 3 * d)},
                               {"mlp_b1", oracle::random_matrix(rng, d, 1)},
                               {"mlp_w2", oracle::random_matrix(rng, d, d)},
                               {"mlp_b2", oracle::random_matrix(rng, d, 1)},
                               {"w_u", oracle::random_matrix(rng, d, parts * dim)},
                               {"v_u", oracle::random_matrix(rng, d, 1)}};

  auto layer_of = [](const macg::ad::ParamVars& v) {
    LayerParamVars lp;
    lp.w_e = {v.at("w_e")};
    lp.a_e = {v.at("a_e")};
    lp.w_z = v.at("w_z");
    lp.mlp_w1 = v.at("mlp_w1");
    lp.mlp_b1 = v.at("mlp_b1");
    lp.mlp_w2 = v.at("mlp_w2");
    lp.mlp_b2 = v.at("mlp_b2");
    return lp;
  };

  auto intra_fn = [&](Tape& t, const macg::ad::ParamVars& v) {
    auto msgs = macg::intra_part_messages(t, lift(t, g), g, layer_of(v), true, kSlope, nullptr);
    Var loss = t.sum(t.cmul(msgs[0], weigh));
    return t.add(loss, t.sum(t.cmul(msgs[1], weigh)));
  };
  auto inter_fn = [&](Tape& t, const macg::ad::ParamVars& v) {
    auto msgs = macg::inter_part_messages(t, lift(t, g), g, layer_of(v), true, kSlope, nullptr);
    return t.sum(t.cmul(msgs[0], weigh));
  };
  auto graph_fn = [&](Tape& t, const macg::ad::ParamVars& v) {
    Var msg = macg::inter_graph_messages(t, lift(t, g), lift(t, partner), g.real_mask,
                                         partner.real_mask, v.at("w_z"), true, nullptr);
    return t.sum(t.cmul(msg, weigh));
  };
  Matrix update_weigh = oracle::random_matrix(rng, d, n + 1);
  auto update_fn = [&, update_weigh](Tape& t, const macg::ad::ParamVars& v) {
    StateVars prev = lift(t, g);
    auto intra = macg::intra_part_messages(t, prev, g, layer_of(v), true, kSlope, nullptr);
    auto inter = macg::inter_part_messages(t, prev, g, layer_of(v), true, kSlope, nullptr);
    Var mu = macg::inter_graph_messages(t, prev, lift(t, partner), g.real_mask,
                                        partner.real_mask, v.at("w_z"), true, nullptr);
    StateVars out = macg::update_nodes(t, prev, intra, inter, mu, g, layer_of(v));
    return t.sum(t.cmul(out.parts[0], update_weigh));
  };
  auto readout_fn = [&](Tape& t, const macg::ad::ParamVars& v) {
    ReadoutParamVars rp{v.at("w_u"), v.at("v_u")};
    auto result = macg::readout(t, lift(t, g), g, rp, true, nullptr, nullptr);
    return t.sum(t.hadamard(result.embedding, result.embedding));
  };

  for (auto& [name, fn] : std::vector<std::pair<const char*, macg::ad::TracedScalarFn>>{
           {"intra", intra_fn}, {"inter_part", inter_fn}, {"inter_graph", graph_fn},
           {"update", update_fn}, {"readout", readout_fn}}) {
    auto report = macg::ad::grad_check(fn, params, 1e-4);
    CHECK_MESSAGE(report.pass, name, ": worst ", report.worst, " at ", report.worst_param);
  }
}
