#pragma once

#include <vector>

#include "macg/attention.hpp"
#include "macg/tape.hpp"

namespace macg {

/// Labels for one group pair. Person-level fields are defined only for
/// positive pairs (person correspondence learning runs on positive pairs).
struct PairLabels {
  int group_label = 1;     // y_g in {+1, -1}
  Matrix person_labels;    // N x N of +-1 over real node pairs; empty when y_g = -1
  Matrix gt_permutation;   // N x N binary; empty when y_g = -1
  double margin = 1.0;

  bool positive() const { return group_label > 0; }
};

struct LossReport {
  double group = 0.0;
  double person = 0.0;
  double pce = 0.0;
  double total = 0.0;
};

/// Hinge pair loss max(0, m - y_g (1 - ||h_s - h_r||^2)).
Var group_pair_loss(Tape& tape, Var h_s, Var h_r, int group_label, double margin);

/// Sum over real cross-graph node pairs and parts of
/// max(0, m - y_p (1 - ||h_sip - h_rjp||^2)). Contract error on negative pairs.
Var person_pair_loss(Tape& tape, const StateVars& s, const StateVars& r,
                     const std::vector<bool>& real_s, const std::vector<bool>& real_r,
                     const PairLabels& labels);

/// Unweighted sum of the three objectives; rejects non-finite components.
LossReport total_loss(double group, double person, double pce);

}  // namespace macg
