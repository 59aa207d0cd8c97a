#pragma once

#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "macg/errors.hpp"
#include "macg/matrix.hpp"

namespace macg::ad {

/// Handle to a value slot on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// parameter-id -> gradient, shaped like the parameter.
using GradientMap = std::map<std::string, Matrix>;

/// Reverse-mode gradient tape over dense matrices. Ops are recorded in
/// program order and evaluated eagerly; backward() replays them in exact
/// reverse order, accumulating gradients additively over fan-out.
///
/// A tape is single-writer: recording and backward stay on one thread.
class Tape {
 public:
  Tape();

  // Leaves. Constants never receive gradients; params are registered under a
  // unique id and reported in the GradientMap.
  Var constant(Matrix value);
  Var param(const std::string& id, const Matrix& value);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var scale(Var a, double k);
  Var affine(Var a, double mul, double shift);  // mul*x + shift, elementwise
  Var matmul(Var a, Var b);
  Var linear(Var w, Var x) { return matmul(w, x); }
  Var transpose(Var a);
  Var hadamard(Var a, Var b);
  Var cmul(Var a, const Matrix& m);  // elementwise product with a constant
  Var sum(Var a);                    // 1x1
  Var dot(Var a, Var b);             // 1x1, same shapes
  Var relu(Var a);
  Var leaky_relu(Var a, double negative_slope);
  Var exp(Var a);
  Var log(Var a);
  Var clamp(Var a, double lo, double hi);
  Var rsqrt(Var a, double eps);   // elementwise 1/sqrt(x + eps)
  Var scale_by(Var a, Var s);     // s is 1x1
  Var concat(std::span<const Var> parts, int axis);  // 0: stack rows, 1: stack cols
  Var slice_rows(Var a, int first, int count);
  Var mask_cols(Var a, const std::vector<bool>& keep);  // zero out masked columns

  // Softmax over a vector (1xn or nx1) restricted to mask-true entries.
  // Masked entries are exactly 0; computed with max-subtraction.
  Var masked_softmax(Var logits, const std::vector<bool>& mask);
  // Row-wise masked softmax of an RxC matrix with a column mask.
  Var masked_softmax_rows(Var logits, const std::vector<bool>& col_mask);

  Var row_normalize(Var a);  // divide every row by its sum
  Var col_normalize(Var a);  // divide every column by its sum
  Var l2_normalize_cols(Var a, double eps);

  const Matrix& value(Var v) const;

  /// Gradients of a scalar loss w.r.t. every registered parameter.
  /// Deterministic and rerunnable: grad slots are reset on every call.
  GradientMap backward(Var loss);

  int size() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    std::function<void(Tape&, int)> backprop;  // (tape, own id)
  };

  std::vector<Node> nodes_;
  std::vector<std::pair<std::string, int>> params_;

  int push(Matrix value, bool requires_grad, std::function<void(Tape&, int)> backprop);
  const Node& node(Var v) const;
  Node& node_mut(int id) { return nodes_[static_cast<size_t>(id)]; }
  const Matrix& val(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  // Gradient slot of node id, allocated (zeroed) on first touch.
  Matrix& grad_slot(int id);
  void accumulate(int id, const Matrix& g, double k = 1.0);
  bool needs_grad(Var v) const { return node(v).requires_grad; }

  friend struct TapeBackpropAccess;
};

}  // namespace macg::ad
