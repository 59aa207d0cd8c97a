#pragma once

#include <vector>

#include "macg/attention.hpp"
#include "macg/tape.hpp"

namespace macg {

inline constexpr double kAffinityLogitClamp = 30.0;
inline constexpr double kPermutationCeEps = 1e-7;

/// Node-level affinity M_ij = exp(h_si^T A h_rj / tau) over concatenated
/// final-layer part features. Logits are clamped to +-30 before exp.
Var affinity(Tape& tape, const StateVars& s, const StateVars& r, Var weight, double tau);

/// Fixed-unroll Sinkhorn on the tape (training path): alternating row and
/// column normalization, differentiable through every iteration.
Var sinkhorn_unrolled(Tape& tape, Var m, int iterations);

struct SinkhornResult {
  Matrix values;
  int iterations = 0;
  double residual = 0.0;  // max |row/col sum - 1|
};

/// Evaluation-path Sinkhorn with convergence test. Input must be square with
/// strictly positive entries.
SinkhornResult sinkhorn(const Matrix& m, int max_iters, double tol);

double sinkhorn_residual(const Matrix& m);

/// Binary cross-entropy between a soft permutation and the ground truth,
/// summed over real-node rows and columns only; entries are clamped into
/// [eps, 1-eps] with eps = 1e-7.
Var permutation_ce(Tape& tape, Var s, const Matrix& gt, const std::vector<bool>& real_s,
                   const std::vector<bool>& real_r);
double permutation_ce(const Matrix& s, const Matrix& gt, const std::vector<bool>& real_s,
                      const std::vector<bool>& real_r);

/// Maximum-sum assignment by exhaustive search; verification oracle for
/// correspondence quality. Group sizes peak at 8, so n > 8 is out of scope.
Matrix exact_assignment(const Matrix& m);

}  // namespace macg
