#include "macg/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace macg::ad {

namespace {

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

void check_vector_mask(const Matrix& v, const std::vector<bool>& mask) {
  if (v.rows() != 1 && v.cols() != 1) {
    throw DimensionError("masked_softmax: expected a vector, got " + shape_str(v));
  }
  if (static_cast<size_t>(v.size()) != mask.size()) {
    throw DimensionError("masked_softmax: mask length " + std::to_string(mask.size()) +
                         " vs vector length " + std::to_string(v.size()));
  }
}

// Softmax with max-subtraction over the masked support of a strided slice.
// Writes exact zeros at masked positions. Returns false if the support is empty.
bool softmax_slice(const double* x, double* y, const std::vector<bool>& mask) {
  const size_t n = mask.size();
  double hi = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (size_t j = 0; j < n; ++j) {
    if (mask[j]) {
      any = true;
      if (x[j] > hi) hi = x[j];
    }
  }
  if (!any) return false;
  double denom = 0.0;
  for (size_t j = 0; j < n; ++j) {
    if (mask[j]) {
      y[j] = std::exp(x[j] - hi);
      denom += y[j];
    } else {
      y[j] = 0.0;
    }
  }
  for (size_t j = 0; j < n; ++j) {
    if (mask[j]) y[j] /= denom;
  }
  return true;
}

}  // namespace

Tape::Tape() { nodes_.reserve(1024); }

int Tape::push(Matrix value, bool requires_grad, std::function<void(Tape&, int)> backprop) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.backprop = requires_grad ? std::move(backprop) : nullptr;
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || v.id >= static_cast<int>(nodes_.size())) {
    throw ContractError("Tape: invalid Var handle");
  }
  return nodes_[static_cast<size_t>(v.id)];
}

Matrix& Tape::grad_slot(int id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (n.grad.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate(int id, const Matrix& g, double k) {
  if (!nodes_[static_cast<size_t>(id)].requires_grad) return;
  axpy(grad_slot(id), g, k);
}

const Matrix& Tape::value(Var v) const { return node(v).value; }

Var Tape::constant(Matrix value) { return {push(std::move(value), false, nullptr)}; }

Var Tape::param(const std::string& id, const Matrix& value) {
  for (const auto& [name, _] : params_) {
    if (name == id) throw ContractError("Tape::param: duplicate parameter id '" + id + "'");
  }
  int slot = push(value, true, nullptr);
  params_.emplace_back(id, slot);
  return {slot};
}

Var Tape::add(Var a, Var b) {
  const Matrix& av = node(a).value;
  const Matrix& bv = node(b).value;
  if (!same_shape(av, bv)) {
    throw DimensionError("add: " + shape_str(av) + " vs " + shape_str(bv));
  }
  Matrix out = ad::add(av, bv);
  int ai = a.id, bi = b.id;
  return {push(std::move(out), needs_grad(a) || needs_grad(b), [ai, bi](Tape& t, int self) {
    const Matrix& g = t.nodes_[static_cast<size_t>(self)].grad;
    t.accumulate(ai, g);
    t.accumulate(bi, g);
  })};
}

Var Tape::sub(Var a, Var b) {
  const Matrix& av = node(a).value;
  const Matrix& bv = node(b).value;
  if (!same_shape(av, bv)) {
    throw DimensionError("sub: " + shape_str(av) + " vs " + shape_str(bv));
  }
  Matrix out = ad::sub(av, bv);
  int ai = a.id, bi = b.id;
  return {push(std::move(out), needs_grad(a) || needs_grad(b), [ai, bi](Tape& t, int self) {
    const Matrix& g = t.nodes_[static_cast<size_t>(self)].grad;
    t.accumulate(ai, g);
    t.accumulate(bi, g, -1.0);
  })};
}

Var Tape::scale(Var a, double k) { return affine(a, k, 0.0); }

Var Tape::affine(Var a, double mul, double shift) {
  Matrix out = node(a).value;
  for (auto& v : out.values()) v = mul * v + shift;
  int ai = a.id;
  return {push(std::move(out), needs_grad(a), [ai, mul](Tape& t, int self) {
    t.accumulate(ai, t.nodes_[static_cast<size_t>(self)].grad, mul);
  })};
}

Var Tape::matmul(Var a, Var b) {
  const Matrix& av = node(a).value;
  const Matrix& bv = node(b).value;
  Matrix out = ad::matmul(av, bv);  // throws DimensionError on mismatch
  int ai = a.id, bi = b.id;
  return {push(std::move(out), needs_grad(a) || needs_grad(b), [ai, bi](Tape& t, int self) {
    const Matrix& g = t.nodes_[static_cast<size_t>(self)].grad;
    if (t.nodes_[static_cast<size_t>(ai)].requires_grad) {
      matmul_nt_acc(t.grad_slot(ai), g, t.val(bi));  // dA = G B^T
    }
    if (t.nodes_[static_cast<size_t>(bi)].requires_grad) {
      matmul_tn_acc(t.grad_slot(bi), t.val(ai), g);  // dB = A^T G
    }
  })};
}

Var Tape::transpose(Var a) {
  Matrix out = ad::transpose(node(a).value);
  int ai = a.id;
  return {push(std::move(out), needs_grad(a), [ai](Tape& t, int self) {
    t.accumulate(ai, ad::transpose(t.nodes_[static_cast<size_t>(self)].grad));
  })};
}

Var Tape::hadamard(Var a, Var b) {
  const Matrix& av = node(a).value;
  const Matrix& bv = node(b).value;
  if (!same_shape(av, bv)) {
    throw DimensionError("hadamard: " + shape_str(av) + " vs " + shape_str(bv));
  }
  Matrix out = ad::hadamard(av, bv);
  int ai = a.id, bi = b.id;
  return {push(std::move(out), needs_grad(a) || needs_grad(b), [ai, bi](Tape& t, int self) {
    const Matrix& g = t.nodes_[static_cast<size_t>(self)].grad;
    if (t.nodes_[static_cast<size_t>(ai)].requires_grad) {
      t.accumulate(ai, ad::hadamard(g, t.val(bi)));
    }
    if (t.nodes_[static_cast<size_t>(bi)].requires_grad) {
      t.accumulate(bi, ad::hadamard(g, t.val(ai)));
    }
  })};
}

Var Tape::cmul(Var a, const Matrix& m) {
  const Matrix& av = node(a).value;
  if (!same_shape(av, m)) {
    throw DimensionError("cmul: " + shape_str(av) + " vs " + shape_str(m));
  }
  Matrix out = ad::hadamard(av, m);
  int ai = a.id;
  return {push(std::move(out), needs_grad(a), [ai, m](Tape& t, int self) {
    t.accumulate(ai, ad::hadamard(t.nodes_[static_cast<size_t>(self)].grad, m));
  })};
}

Var Tape::sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = ad::sum(node(a).value);
  int ai = a.id;
  return {push(std::move(out), needs_grad(a), [ai](Tape& t, int self) {
    double g = t.nodes_[static_cast<size_t>(self)].grad(0, 0);
    Matrix& slot = t.grad_slot(ai);
    for (auto& v : slot.values()) v += g;
  })};
}

Var Tape::dot(Var a, Var b) {
  const Matrix& av = node(a).value;
  const Matrix& bv = node(b).value;
  if (!same_shape(av, bv)) {
    throw DimensionError("dot: " + shape_str(av) + " vs " + shape_str(bv));
  }
  double acc = 0.0;
  for (size_t i = 0; i < av.size(); ++i) acc += av.values()[i] * bv.values()[i];
  Matrix out(1, 1);
  out(0, 0) = acc;
  int ai = a.id, bi = b.id;
  return {push(std::move(out), needs_grad(a) || needs_grad(b), [ai, bi](Tape& t, int self) {
    double g = t.nodes_[static_cast<size_t>(self)].grad(0, 0);
    if (t.nodes_[static_cast<size_t>(ai)].requires_grad) t.accumulate(ai, t.val(bi), g);
    if (t.nodes_[static_cast<size_t>(bi)].requires_grad) t.accumulate(bi, t.val(ai), g);
  })};
}

Var Tape::relu(Var a) { return leaky_relu(a, 0.0); }

Var Tape::leaky_relu(Var a, double negative_slope) {
  Matrix out = node(a).value;
  for (auto& v : out.values()) {
    if (v <= 0.0) v *= negative_slope;
  }
  int ai = a.id;
  return {push(std::move(out), needs_grad(a), [ai, negative_slope](Tape& t, int self) {
    const Matrix& g = t.nodes_[static_cast<size_t>(self)].grad;
    const Matrix& x = t.val(ai);
    Matrix& slot = t.grad_slot(ai);
    for (size_t i = 0; i < x.size(); ++i) {
      // subgradient at the kink: negative branch
      slot.values()[i] += g.values()[i] * (x.values()[i] > 0.0 ? 1.0 : negative_slope);
    }
  })};
}

Var Tape::exp(Var a) {
  Matrix out = node(a).value;
  for (auto& v : out.values()) v = std::exp(v);
  int ai = a.id;
  return {push(std::move(out), needs_grad(a), [ai](Tape& t, int self) {
    const Node& n = t.nodes_[static_cast<size_t>(self)];
    t.accumulate(ai, ad::hadamard(n.grad, n.value));
  })};
}

Var Tape::log(Var a) {
  Matrix out = node(a).value;
  for (auto& v : out.values()) v = std::log(v);
  int ai = a.id;
  return {push(std::move(out), needs_grad(a), [ai](Tape& t, int self) {
    const Matrix& g = t.nodes_[static_cast<size_t>(self)].grad;
    const Matrix& x = t.val(ai);
    Matrix& slot = t.grad_slot(ai);
    for (size_t i = 0; i < x.size(); ++i) slot.values()[i] += g.values()[i] / x.values()[i];
  })};
}

Var Tape::clamp(Var a, double lo, double hi) {
  if (lo > hi) throw ContractError("clamp: lo > hi");
  Matrix out = node(a).value;
  for (auto& v : out.values()) v = std::min(hi, std::max(lo, v));
  int ai = a.id;
  return {push(std::move(out), needs_grad(a), [ai, lo, hi](Tape& t, int self) {
    const Matrix& g = t.nodes_[static_cast<size_t>(self)].grad;
    const Matrix& x = t.val(ai);
    Matrix& slot = t.grad_slot(ai);
    for (size_t i = 0; i < x.size(); ++i) {
      double v = x.values()[i];
      if (v > lo && v < hi) slot.values()[i] += g.values()[i];
    }
  })};
}

Var Tape::rsqrt(Var a, double eps) {
  Matrix out = node(a).value;
  for (auto& v : out.values()) v = 1.0 / std::sqrt(v + eps);
  int ai = a.id;
  return {push(std::move(out), needs_grad(a), [ai](Tape& t, int self) {
    const Node& n = t.nodes_[static_cast<size_t>(self)];
    Matrix& slot = t.grad_slot(ai);
    for (size_t i = 0; i < n.value.size(); ++i) {
      double y = n.value.values()[i];
      slot.values()[i] += n.grad.values()[i] * (-0.5 * y * y * y);
    }
  })};
}

Var Tape::scale_by(Var a, Var s) {
  const Matrix& sv = node(s).value;
  if (sv.rows() != 1 || sv.cols() != 1) {
    throw DimensionError("scale_by: scalar factor must be 1x1, got " + shape_str(sv));
  }
  Matrix out = ad::scale(node(a).value, sv(0, 0));
  int ai = a.id, si = s.id;
  return {push(std::move(out), needs_grad(a) || needs_grad(s), [ai, si](Tape& t, int self) {
    const Matrix& g = t.nodes_[static_cast<size_t>(self)].grad;
    double sval = t.val(si)(0, 0);
    if (t.nodes_[static_cast<size_t>(ai)].requires_grad) t.accumulate(ai, g, sval);
    if (t.nodes_[static_cast<size_t>(si)].requires_grad) {
      const Matrix& x = t.val(ai);
      double acc = 0.0;
      for (size_t i = 0; i < x.size(); ++i) acc += g.values()[i] * x.values()[i];
      Matrix gs(1, 1);
      gs(0, 0) = acc;
      t.accumulate(si, gs);
    }
  })};
}

Var Tape::concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) throw ContractError("concat: no parts");
  if (axis != 0 && axis != 1) throw ContractError("concat: axis must be 0 or 1");
  std::vector<int> ids;
  ids.reserve(parts.size());
  bool grad = false;
  int rows = node(parts[0]).value.rows();
  int cols = node(parts[0]).value.cols();
  int total = axis == 0 ? rows : cols;
  for (size_t i = 1; i < parts.size(); ++i) {
    const Matrix& v = node(parts[i]).value;
    if (axis == 0 && v.cols() != cols) {
      throw DimensionError("concat rows: column mismatch " + shape_str(v));
    }
    if (axis == 1 && v.rows() != rows) {
      throw DimensionError("concat cols: row mismatch " + shape_str(v));
    }
    total += axis == 0 ? v.rows() : v.cols();
  }
  for (Var p : parts) {
    ids.push_back(p.id);
    grad = grad || needs_grad(p);
  }

  Matrix out = axis == 0 ? Matrix(total, cols) : Matrix(rows, total);
  int offset = 0;
  for (Var p : parts) {
    const Matrix& v = node(p).value;
    if (axis == 0) {
      std::copy(v.values().begin(), v.values().end(),
                out.values().begin() + static_cast<size_t>(offset) * cols);
      offset += v.rows();
    } else {
      for (int i = 0; i < rows; ++i)
        for (int j = 0; j < v.cols(); ++j) out(i, offset + j) = v(i, j);
      offset += v.cols();
    }
  }

  return {push(std::move(out), grad, [ids, axis](Tape& t, int self) {
    const Matrix& g = t.nodes_[static_cast<size_t>(self)].grad;
    int offset = 0;
    for (int id : ids) {
      const Matrix& v = t.val(id);
      if (t.nodes_[static_cast<size_t>(id)].requires_grad) {
        Matrix& slot = t.grad_slot(id);
        if (axis == 0) {
          for (int i = 0; i < v.rows(); ++i)
            for (int j = 0; j < v.cols(); ++j) slot(i, j) += g(offset + i, j);
        } else {
          for (int i = 0; i < v.rows(); ++i)
            for (int j = 0; j < v.cols(); ++j) slot(i, j) += g(i, offset + j);
        }
      }
      offset += axis == 0 ? v.rows() : v.cols();
    }
  })};
}

Var Tape::slice_rows(Var a, int first, int count) {
  const Matrix& av = node(a).value;
  if (first < 0 || count < 0 || first + count > av.rows()) {
    throw DimensionError("slice_rows: range [" + std::to_string(first) + ", " +
                         std::to_string(first + count) + ") out of " +
                         std::to_string(av.rows()) + " rows");
  }
  Matrix out(count, av.cols());
  for (int i = 0; i < count; ++i)
    for (int j = 0; j < av.cols(); ++j) out(i, j) = av(first + i, j);
  int ai = a.id;
  return {push(std::move(out), needs_grad(a), [ai, first, count](Tape& t, int self) {
    const Matrix& g = t.nodes_[static_cast<size_t>(self)].grad;
    Matrix& slot = t.grad_slot(ai);
    for (int i = 0; i < count; ++i)
      for (int j = 0; j < g.cols(); ++j) slot(first + i, j) += g(i, j);
  })};
}

Var Tape::mask_cols(Var a, const std::vector<bool>& keep) {
  const Matrix& av = node(a).value;
  if (static_cast<int>(keep.size()) != av.cols()) {
    throw DimensionError("mask_cols: mask length vs " + shape_str(av));
  }
  Matrix out = av;
  for (int j = 0; j < av.cols(); ++j) {
    if (!keep[static_cast<size_t>(j)]) {
      for (int i = 0; i < av.rows(); ++i) out(i, j) = 0.0;
    }
  }
  int ai = a.id;
  return {push(std::move(out), needs_grad(a), [ai, keep](Tape& t, int self) {
    const Matrix& g = t.nodes_[static_cast<size_t>(self)].grad;
    Matrix& slot = t.grad_slot(ai);
    for (int i = 0; i < g.rows(); ++i)
      for (int j = 0; j < g.cols(); ++j) {
        if (keep[static_cast<size_t>(j)]) slot(i, j) += g(i, j);
      }
  })};
}

Var Tape::masked_softmax(Var logits, const std::vector<bool>& mask) {
  const Matrix& lv = node(logits).value;
  check_vector_mask(lv, mask);
  Matrix out(lv.rows(), lv.cols());
  // vector data is contiguous regardless of orientation
  if (!softmax_slice(lv.values().data(), out.values().data(), mask)) {
    throw ContractError("masked_softmax: empty support (all-false mask)");
  }
  int ai = logits.id;
  return {push(std::move(out), needs_grad(logits), [ai, mask](Tape& t, int self) {
    const Node& n = t.nodes_[static_cast<size_t>(self)];
    Matrix& slot = t.grad_slot(ai);
    const size_t len = mask.size();
    double s = 0.0;
    for (size_t j = 0; j < len; ++j) {
      if (mask[j]) s += n.grad.values()[j] * n.value.values()[j];
    }
    for (size_t j = 0; j < len; ++j) {
      if (mask[j]) slot.values()[j] += n.value.values()[j] * (n.grad.values()[j] - s);
    }
  })};
}

Var Tape::masked_softmax_rows(Var logits, const std::vector<bool>& col_mask) {
  const Matrix& lv = node(logits).value;
  if (static_cast<int>(col_mask.size()) != lv.cols()) {
    throw DimensionError("masked_softmax_rows: mask length vs " + shape_str(lv));
  }
  Matrix out(lv.rows(), lv.cols());
  for (int i = 0; i < lv.rows(); ++i) {
    const double* x = lv.values().data() + static_cast<size_t>(i) * lv.cols();
    double* y = out.values().data() + static_cast<size_t>(i) * lv.cols();
    if (!softmax_slice(x, y, col_mask)) {
      throw ContractError("masked_softmax_rows: empty support (all-false mask)");
    }
  }
  int ai = logits.id;
  return {push(std::move(out), needs_grad(logits), [ai, col_mask](Tape& t, int self) {
    const Node& n = t.nodes_[static_cast<size_t>(self)];
    Matrix& slot = t.grad_slot(ai);
    const int cols = n.value.cols();
    for (int i = 0; i < n.value.rows(); ++i) {
      double s = 0.0;
      for (int j = 0; j < cols; ++j) {
        if (col_mask[static_cast<size_t>(j)]) s += n.grad(i, j) * n.value(i, j);
      }
      for (int j = 0; j < cols; ++j) {
        if (col_mask[static_cast<size_t>(j)]) {
          slot(i, j) += n.value(i, j) * (n.grad(i, j) - s);
        }
      }
    }
  })};
}

Var Tape::row_normalize(Var a) {
  const Matrix& av = node(a).value;
  std::vector<double> sums(static_cast<size_t>(av.rows()), 0.0);
  for (int i = 0; i < av.rows(); ++i) {
    double s = 0.0;
    for (int j = 0; j < av.cols(); ++j) s += av(i, j);
    if (s == 0.0) throw NumericError("row_normalize: zero row sum at row " + std::to_string(i));
    sums[static_cast<size_t>(i)] = s;
  }
  Matrix out = av;
  for (int i = 0; i < av.rows(); ++i)
    for (int j = 0; j < av.cols(); ++j) out(i, j) /= sums[static_cast<size_t>(i)];
  int ai = a.id;
  return {push(std::move(out), needs_grad(a), [ai, sums](Tape& t, int self) {
    const Node& n = t.nodes_[static_cast<size_t>(self)];
    Matrix& slot = t.grad_slot(ai);
    for (int i = 0; i < n.value.rows(); ++i) {
      double gy = 0.0;
      for (int j = 0; j < n.value.cols(); ++j) gy += n.grad(i, j) * n.value(i, j);
      double inv = 1.0 / sums[static_cast<size_t>(i)];
      for (int j = 0; j < n.value.cols(); ++j) slot(i, j) += (n.grad(i, j) - gy) * inv;
    }
  })};
}

Var Tape::col_normalize(Var a) {
  const Matrix& av = node(a).value;
  std::vector<double> sums(static_cast<size_t>(av.cols()), 0.0);
  for (int j = 0; j < av.cols(); ++j) {
    double s = 0.0;
    for (int i = 0; i < av.rows(); ++i) s += av(i, j);
    if (s == 0.0) throw NumericError("col_normalize: zero column sum at column " + std::to_string(j));
    sums[static_cast<size_t>(j)] = s;
  }
  Matrix out = av;
  for (int i = 0; i < av.rows(); ++i)
    for (int j = 0; j < av.cols(); ++j) out(i, j) /= sums[static_cast<size_t>(j)];
  int ai = a.id;
  return {push(std::move(out), needs_grad(a), [ai, sums](Tape& t, int self) {
    const Node& n = t.nodes_[static_cast<size_t>(self)];
    Matrix& slot = t.grad_slot(ai);
    for (int j = 0; j < n.value.cols(); ++j) {
      double gy = 0.0;
      for (int i = 0; i < n.value.rows(); ++i) gy += n.grad(i, j) * n.value(i, j);
      double inv = 1.0 / sums[static_cast<size_t>(j)];
      for (int i = 0; i < n.value.rows(); ++i) slot(i, j) += (n.grad(i, j) - gy) * inv;
    }
  })};
}

Var Tape::l2_normalize_cols(Var a, double eps) {
  const Matrix& av = node(a).value;
  std::vector<double> norms(static_cast<size_t>(av.cols()), 0.0);
  for (int j = 0; j < av.cols(); ++j) {
    double s = 0.0;
    for (int i = 0; i < av.rows(); ++i) s += av(i, j) * av(i, j);
    norms[static_cast<size_t>(j)] = std::sqrt(s + eps);
  }
  Matrix out = av;
  for (int i = 0; i < av.rows(); ++i)
    for (int j = 0; j < av.cols(); ++j) out(i, j) /= norms[static_cast<size_t>(j)];
  int ai = a.id;
  return {push(std::move(out), needs_grad(a), [ai, norms](Tape& t, int self) {
    const Node& n = t.nodes_[static_cast<size_t>(self)];
    Matrix& slot = t.grad_slot(ai);
    for (int j = 0; j < n.value.cols(); ++j) {
      double gy = 0.0;
      for (int i = 0; i < n.value.rows(); ++i) gy += n.grad(i, j) * n.value(i, j);
      double inv = 1.0 / norms[static_cast<size_t>(j)];
      for (int i = 0; i < n.value.rows(); ++i) {
        slot(i, j) += (n.grad(i, j) - n.value(i, j) * gy) * inv;
      }
    }
  })};
}

GradientMap Tape::backward(Var loss) {
  const Node& root = node(loss);
  if (root.value.rows() != 1 || root.value.cols() != 1) {
    throw ContractError("backward: loss must be a 1x1 scalar, got " + shape_str(root.value));
  }
  // Reset grad slots so backward is rerunnable and deterministic.
  for (auto& n : nodes_) n.grad = Matrix();
  grad_slot(loss.id)(0, 0) = 1.0;
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<size_t>(i)];
    if (!n.grad.empty() && n.backprop) n.backprop(*this, i);
  }
  GradientMap out;
  for (const auto& [name, id] : params_) {
    const Node& n = nodes_[static_cast<size_t>(id)];
    out[name] = n.grad.empty() ? Matrix(n.value.rows(), n.value.cols()) : n.grad;
  }
  return out;
}

}  // namespace macg::ad
