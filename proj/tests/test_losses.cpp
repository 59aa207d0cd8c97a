#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "macg/errors.hpp"
#include "macg/losses.hpp"
#include "macg/rng.hpp"
#include "oracles.hpp"

using macg::ContractError;
using macg::NumericError;
using macg::PairLabels;
using macg::Rng;
using macg::StateVars;
using macg::ad::Matrix;
using macg::ad::Tape;
using macg::ad::Var;

namespace {

Var column(Tape& t, const std::vector<double>& values) {
  Matrix m(static_cast<int>(values.size()), 1);
  for (size_t i = 0; i < values.size(); ++i) m(static_cast<int>(i), 0) = values[i];
  return t.constant(m);
}

StateVars states_from(Tape& t, const std::vector<Matrix>& parts) {
  StateVars s;
  for (const auto& p : parts) s.parts.push_back(t.constant(p));
  return s;
}

}  // namespace

TEST_CASE("group pair loss: identical embeddings") {
  Tape t;
  Var h = column(t, {0.3, -0.7, 0.2});
  CHECK(t.value(macg::group_pair_loss(t, h, h, 1, 1.0))(0, 0) == 0.0);
  CHECK(t.value(macg::group_pair_loss(t, h, h, -1, 1.0))(0, 0) == doctest::Approx(2.0));
}

TEST_CASE("group pair loss: positive pair at squared distance 0.5") {
  Tape t;
  // ||h_s - h_r||^2 = 0.5
  Var hs = column(t, {std::sqrt(0.5), 0.0});
  Var hr = column(t, {0.0, 0.0});
  CHECK(t.value(macg::group_pair_loss(t, hs, hr, 1, 1.0))(0, 0) == doctest::Approx(0.5));
}

TEST_CASE("group pair loss: contract checks") {
  Tape t;
  Var hs = column(t, {1.0, 0.0});
  Var hr = column(t, {1.0});
  CHECK_THROWS_AS(macg::group_pair_loss(t, hs, hr, 1, 1.0), macg::DimensionError);
  Var h2 = column(t, {0.0, 1.0});
  CHECK_THROWS_AS(macg::group_pair_loss(t, hs, h2, 0, 1.0), ContractError);
  CHECK_THROWS_AS(macg::group_pair_loss(t, hs, h2, 1, 0.0), ContractError);
}

TEST_CASE("group pair loss: hinge monotonicity in the squared distance") {
  Tape t;
  double previous_pos = -1.0;
  double previous_neg = 3.0;
  for (double d : {0.0, 0.3, 0.9, 1.4, 2.5}) {
    Var hs = column(t, {std::sqrt(d)});
    Var hr = column(t, {0.0});
    double pos = t.value(macg::group_pair_loss(t, hs, hr, 1, 1.0))(0, 0);
    double neg = t.value(macg::group_pair_loss(t, hs, hr, -1, 1.0))(0, 0);
    CHECK(pos >= previous_pos);
    CHECK(neg <= previous_neg);
    CHECK(pos >= 0.0);
    CHECK(neg >= 0.0);
    previous_pos = pos;
    previous_neg = neg;
  }
}

TEST_CASE("person pair loss: identical features with all-positive labels vanish") {
  Tape t;
  Rng rng(3);
  // every node carries the same feature, every cross pair is labeled +1
  Matrix same_cols(3, 2);
  for (int k = 0; k < 3; ++k) {
    double v = rng.uniform(-1.0, 1.0);
    same_cols(k, 0) = v;
    same_cols(k, 1) = v;
  }
  PairLabels labels;
  labels.group_label = 1;
  labels.margin = 1.0;
  labels.person_labels = Matrix::filled(2, 2, 1.0);
  std::vector<bool> mask{true, true};
  StateVars s_same = states_from(t, {same_cols, same_cols});
  Var loss = macg::person_pair_loss(t, s_same, s_same, mask, mask, labels);
  CHECK(t.value(loss)(0, 0) == 0.0);
}

TEST_CASE("person pair loss: hand evaluation on 1x1 graphs with P=2") {
  Tape t;
  // each part pair at squared distance 0.3: per part max(0, 1 - (1 - 0.3)) = 0.3
  Matrix sa(2, 1), sb(2, 1);
  sa(0, 0) = std::sqrt(0.3);
  Matrix ra(2, 1), rb(2, 1);
  StateVars s = states_from(t, {sa, sa});
  StateVars r = states_from(t, {ra, rb});
  PairLabels labels;
  labels.group_label = 1;
  labels.margin = 1.0;
  labels.person_labels = Matrix::filled(1, 1, 1.0);
  std::vector<bool> mask{true};
  Var loss = macg::person_pair_loss(t, s, r, mask, mask, labels);
  CHECK(t.value(loss)(0, 0) == doctest::Approx(0.6).epsilon(1e-12));
}

TEST_CASE("person pair loss: dummy rows contribute exactly zero") {
  Tape t;
  Rng rng(7);
  Matrix real_block = oracle::random_matrix(rng, 3, 2);
  Matrix padded(3, 3);
  for (int k = 0; k < 3; ++k)
    for (int i = 0; i < 2; ++i) padded(k, i) = real_block(k, i);
  StateVars narrow = states_from(t, {real_block, real_block});
  StateVars wide = states_from(t, {padded, padded});

  PairLabels narrow_labels;
  narrow_labels.group_label = 1;
  narrow_labels.margin = 1.0;
  narrow_labels.person_labels = Matrix::from_rows({{1.0, -1.0}, {-1.0, 1.0}});
  PairLabels wide_labels = narrow_labels;
  wide_labels.person_labels = Matrix(3, 3);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) wide_labels.person_labels(i, j) = narrow_labels.person_labels(i, j);

  std::vector<bool> mask2{true, true};
  std::vector<bool> mask3{true, true, false};
  double base = t.value(macg::person_pair_loss(t, narrow, narrow, mask2, mask2, narrow_labels))(0, 0);
  double padded_loss =
      t.value(macg::person_pair_loss(t, wide, wide, mask3, mask3, wide_labels))(0, 0);
  CHECK(padded_loss == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("person pair loss rejects negative pairs") {
  Tape t;
  Rng rng(9);
  Matrix part = oracle::random_matrix(rng, 2, 2);
  StateVars s = states_from(t, {part});
  PairLabels labels;
  labels.group_label = -1;
  std::vector<bool> mask{true, true};
  CHECK_THROWS_AS(macg::person_pair_loss(t, s, s, mask, mask, labels), ContractError);
}

TEST_CASE("person pair loss symmetry under swapping the pair") {
  Tape t;
  Rng rng(11);
  Matrix a0 = oracle::random_matrix(rng, 3, 2), a1 = oracle::random_matrix(rng, 3, 2);
  Matrix b0 = oracle::random_matrix(rng, 3, 2), b1 = oracle::random_matrix(rng, 3, 2);
  StateVars s = states_from(t, {a0, a1});
  StateVars r = states_from(t, {b0, b1});
  PairLabels labels;
  labels.group_label = 1;
  labels.margin = 1.0;
  labels.person_labels = Matrix::from_rows({{1.0, -1.0}, {-1.0, 1.0}});
  PairLabels transposed = labels;
  transposed.person_labels = transpose(labels.person_labels);
  std::vector<bool> mask{true, true};
  double forward = t.value(macg::person_pair_loss(t, s, r, mask, mask, labels))(0, 0);
  double swapped = t.value(macg::person_pair_loss(t, r, s, mask, mask, transposed))(0, 0);
  CHECK(forward == doctest::Approx(swapped).epsilon(1e-12));
}

TEST_CASE("group pair loss symmetry") {
  Tape t;
  Var hs = column(t, {0.4, -0.2, 0.9});
  Var hr = column(t, {-0.1, 0.3, 0.5});
  double a = t.value(macg::group_pair_loss(t, hs, hr, 1, 1.0))(0, 0);
  double b = t.value(macg::group_pair_loss(t, hr, hs, 1, 1.0))(0, 0);
  CHECK(a == doctest::Approx(b).epsilon(1e-12));
}

TEST_CASE("total loss combines components and validates them") {
  macg::LossReport zero = macg::total_loss(0.0, 0.0, 0.0);
  CHECK(zero.total == 0.0);

  macg::LossReport basic = macg::total_loss(1.0, 2.0, 3.0);
  CHECK(basic.total == doctest::Approx(6.0));
  CHECK(std::fabs(basic.total - (basic.group + basic.person + basic.pce)) < 1e-12);

  // negative-pair policy: person and pce forced to zero, total equals group
  macg::LossReport negative = macg::total_loss(1.7, 0.0, 0.0);
  CHECK(negative.total == doctest::Approx(1.7));

  CHECK_THROWS_AS(macg::total_loss(std::nan(""), 0.0, 0.0), NumericError);
  CHECK_THROWS_AS(macg::total_loss(0.0, 1.0 / 0.0, 0.0), NumericError);
}
