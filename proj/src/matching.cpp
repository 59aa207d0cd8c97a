#include "macg/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "macg/errors.hpp"

namespace macg {

namespace {

Matrix pair_mask_matrix(int rows, int cols, const std::vector<bool>& real_s,
                        const std::vector<bool>& real_r) {
  if (static_cast<int>(real_s.size()) != rows || static_cast<int>(real_r.size()) != cols) {
    throw DimensionError("permutation_ce: mask lengths do not match matrix shape");
  }
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) {
      if (real_s[static_cast<size_t>(i)] && real_r[static_cast<size_t>(j)]) m(i, j) = 1.0;
    }
  return m;
}

void check_square_positive(const Matrix& m) {
  if (m.rows() != m.cols()) {
    throw DimensionError("sinkhorn: input must be square, got " + std::to_string(m.rows()) +
                         "x" + std::to_string(m.cols()));
  }
  for (double v : m.values()) {
    if (!(v > 0.0)) throw NumericError("sinkhorn: entries must be strictly positive");
  }
}

}  // namespace

Var affinity(Tape& t, const StateVars& s, const StateVars& r, Var weight, double tau) {
  if (tau <= 0.0) throw ContractError("affinity: tau must be positive");
  if (s.parts.empty() || r.parts.empty()) throw ContractError("affinity: empty states");
  Var hs = t.concat(s.parts, 0);  // (P*d) x N_s
  Var hr = t.concat(r.parts, 0);
  // Only the symmetric part of the weight enters the bilinear form, so that
  // swapping the graphs transposes the affinity (and hence the permutation).
  Var sym = t.scale(t.add(weight, t.transpose(weight)), 0.5);
  Var logits = t.scale(t.matmul(t.matmul(t.transpose(hs), sym), hr), 1.0 / tau);
  return t.exp(t.clamp(logits, -kAffinityLogitClamp, kAffinityLogitClamp));
}

Var sinkhorn_unrolled(Tape& t, Var m, int iterations) {
  const Matrix& mv = t.value(m);
  check_square_positive(mv);
  if (iterations < 1) throw ContractError("sinkhorn_unrolled: need at least one iteration");
  Var s = m;
  for (int i = 0; i < iterations; ++i) {
    s = t.col_normalize(t.row_normalize(s));
  }
  return s;
}

double sinkhorn_residual(const Matrix& m) {
  double worst = 0.0;
  for (int i = 0; i < m.rows(); ++i) {
    double s = 0.0;
    for (int j = 0; j < m.cols(); ++j) s += m(i, j);
    worst = std::max(worst, std::fabs(s - 1.0));
  }
  for (int j = 0; j < m.cols(); ++j) {
    double s = 0.0;
    for (int i = 0; i < m.rows(); ++i) s += m(i, j);
    worst = std::max(worst, std::fabs(s - 1.0));
  }
  return worst;
}

SinkhornResult sinkhorn(const Matrix& m, int max_iters, double tol) {
  check_square_positive(m);
  SinkhornResult out;
  out.values = m;
  const int n = m.rows();
  for (int it = 0; it < max_iters; ++it) {
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      for (int j = 0; j < n; ++j) s += out.values(i, j);
      for (int j = 0; j < n; ++j) out.values(i, j) /= s;
    }
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += out.values(i, j);
      for (int i = 0; i < n; ++i) out.values(i, j) /= s;
    }
    out.iterations = it + 1;
    out.residual = sinkhorn_residual(out.values);
    if (out.residual < tol) break;
  }
  return out;
}

Var permutation_ce(Tape& t, Var s, const Matrix& gt, const std::vector<bool>& real_s,
                   const std::vector<bool>& real_r) {
  const Matrix& sv = t.value(s);
  if (!same_shape(sv, gt)) {
    throw DimensionError("permutation_ce: prediction and ground truth shapes differ");
  }
  Matrix mask = pair_mask_matrix(sv.rows(), sv.cols(), real_s, real_r);
  Matrix pos = ad::hadamard(gt, mask);
  Matrix neg = mask;
  ad::axpy(neg, pos, -1.0);  // (1 - gt) over the real block

  Var clamped = t.clamp(s, kPermutationCeEps, 1.0 - kPermutationCeEps);
  Var hit = t.cmul(t.log(clamped), pos);
  Var miss = t.cmul(t.log(t.affine(clamped, -1.0, 1.0)), neg);
  return t.scale(t.sum(t.add(hit, miss)), -1.0);
}

double permutation_ce(const Matrix& s, const Matrix& gt, const std::vector<bool>& real_s,
                      const std::vector<bool>& real_r) {
  if (!same_shape(s, gt)) {
    throw DimensionError("permutation_ce: prediction and ground truth shapes differ");
  }
  Matrix mask = pair_mask_matrix(s.rows(), s.cols(), real_s, real_r);
  double loss = 0.0;
  for (int i = 0; i < s.rows(); ++i)
    for (int j = 0; j < s.cols(); ++j) {
      if (mask(i, j) == 0.0) continue;
      double v = std::min(1.0 - kPermutationCeEps, std::max(kPermutationCeEps, s(i, j)));
      loss -= gt(i, j) * std::log(v) + (1.0 - gt(i, j)) * std::log(1.0 - v);
    }
  return loss;
}

Matrix exact_assignment(const Matrix& m) {
  if (m.rows() != m.cols()) throw DimensionError("exact_assignment: input must be square");
  const int n = m.rows();
  if (n > 8) {
    throw ContractError("exact_assignment: exhaustive search limited to n <= 8, got " +
                        std::to_string(n));
  }
  std::vector<int> perm(static_cast<size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<int> best = perm;
  double best_score = -std::numeric_limits<double>::infinity();
  do {
    double score = 0.0;
    for (int i = 0; i < n; ++i) score += m(i, perm[static_cast<size_t>(i)]);
    if (score > best_score) {
      best_score = score;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));

  Matrix out(n, n);
  for (int i = 0; i < n; ++i) out(i, best[static_cast<size_t>(i)]) = 1.0;
  return out;
}

}  // namespace macg
