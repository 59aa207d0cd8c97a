#include "macg/losses.hpp"

#include <cmath>

#include "macg/errors.hpp"

namespace macg {

Var group_pair_loss(Tape& t, Var h_s, Var h_r, int group_label, double margin) {
  if (!same_shape(t.value(h_s), t.value(h_r))) {
    throw DimensionError("group_pair_loss: embedding widths differ");
  }
  if (group_label != 1 && group_label != -1) {
    throw ContractError("group_pair_loss: group label must be +1 or -1");
  }
  if (margin <= 0.0) throw ContractError("group_pair_loss: margin must be positive");
  Var diff = t.sub(h_s, h_r);
  Var dist2 = t.sum(t.hadamard(diff, diff));
  // margin - y (1 - d^2) = y*d^2 + (margin - y)
  double y = static_cast<double>(group_label);
  return t.relu(t.affine(dist2, y, margin - y));
}

Var person_pair_loss(Tape& t, const StateVars& s, const StateVars& r,
                     const std::vector<bool>& real_s, const std::vector<bool>& real_r,
                     const PairLabels& labels) {
  if (!labels.positive()) {
    throw ContractError("person_pair_loss: undefined for negative group pairs");
  }
  if (labels.margin <= 0.0) throw ContractError("person_pair_loss: margin must be positive");
  const int parts = s.part_count();
  if (r.part_count() != parts) throw DimensionError("person_pair_loss: part count mismatch");
  const int ns = t.value(s.parts[0]).cols();
  const int nr = t.value(r.parts[0]).cols();
  if (labels.person_labels.rows() != ns || labels.person_labels.cols() != nr) {
    throw DimensionError("person_pair_loss: label matrix does not match node counts");
  }

  // +-1 labels over real pairs, 0 at dummy pairs so those contribute nothing.
  Matrix masked_y(ns, nr);
  for (int i = 0; i < ns; ++i)
    for (int j = 0; j < nr; ++j) {
      if (real_s[static_cast<size_t>(i)] && real_r[static_cast<size_t>(j)]) {
        masked_y(i, j) = labels.person_labels(i, j);
      }
    }
  Matrix mask_abs(ns, nr);
  for (int i = 0; i < ns; ++i)
    for (int j = 0; j < nr; ++j) mask_abs(i, j) = std::fabs(masked_y(i, j)) > 0.0 ? 1.0 : 0.0;

  Var ones_row_r = t.constant(Matrix::filled(1, nr, 1.0));
  Var ones_col_s = t.constant(Matrix::filled(ns, 1, 1.0));

  Var loss;
  for (int q = 0; q < parts; ++q) {
    Var hs = s.parts[static_cast<size_t>(q)];
    Var hr = r.parts[static_cast<size_t>(q)];
    const int d = t.value(hs).rows();
    Var ones_d = t.constant(Matrix::filled(1, d, 1.0));
    // ||a - b||^2 = ||a||^2 + ||b||^2 - 2 a.b, batched over node pairs
    Var ss = t.matmul(ones_d, t.hadamard(hs, hs));  // 1 x N_s column squared norms
    Var rr = t.matmul(ones_d, t.hadamard(hr, hr));  // 1 x N_r
    Var cross = t.matmul(t.transpose(hs), hr);      // N_s x N_r
    Var dist2 = t.add(t.sub(t.matmul(t.transpose(ss), ones_row_r), t.scale(cross, 2.0)),
                      t.matmul(ones_col_s, rr));
    Var y_term = t.cmul(t.affine(dist2, -1.0, 1.0), masked_y);  // y (1 - d^2), 0 at dummies
    Var hinge = t.relu(t.affine(y_term, -1.0, labels.margin));  // max(0, m - y (1 - d^2))
    Var contrib = t.sum(t.cmul(hinge, mask_abs));
    loss = loss.valid() ? t.add(loss, contrib) : contrib;
  }
  return loss;
}

LossReport total_loss(double group, double person, double pce) {
  if (!std::isfinite(group) || !std::isfinite(person) || !std::isfinite(pce)) {
    throw NumericError("total_loss: non-finite component");
  }
  LossReport r;
  r.group = group;
  r.person = person;
  r.pce = pce;
  r.total = group + person + pce;
  return r;
}

}  // namespace macg
