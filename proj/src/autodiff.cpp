#include "rgm/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "rgm/error.hpp"
#include "rgm/kernels.hpp"

namespace rgm::ad {

Parameter::Parameter(std::string id_, Matrix value_)
    : id(std::move(id_)), value(std::move(value_)), grad(value.rows(), value.cols()) {}

std::string_view to_string(Op op) {
  switch (op) {
    case Op::kConstant: return "constant";
    case Op::kVariable: return "variable";
    case Op::kParameter: return "parameter";
    case Op::kAffine: return "affine";
    case Op::kRelu: return "relu";
    case Op::kTanh: return "tanh";
    case Op::kAdd: return "add";
    case Op::kScale: return "scale";
    case Op::kSum: return "sum";
    case Op::kConcatRows: return "concat";
    case Op::kSquaredError: return "squared_error";
    case Op::kSoftmaxCrossEntropy: return "softmax_cross_entropy";
    case Op::kBatchDotSoftmax: return "batch_dot_softmax";
    case Op::kGradReverse: return "grad_reverse";
    case Op::kGradScale: return "grad_scale";
    case Op::kDetach: return "detach";
  }
  return "unknown";
}

namespace {

[[noreturn]] void shape_error(Op op, const std::string& detail) {
  fail(ErrorCode::kShapeMismatch, std::string(to_string(op)) + ": " + detail);
}

// Row-wise log-softmax of `scores` into `probs`; returns sum_i -log p_i[t_i].
double softmax_nll(const Matrix& scores, std::span<const int> targets, Matrix& probs) {
  probs = Matrix(scores.rows(), scores.cols());
  double total = 0.0;
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    auto s = scores.row(i);
    const double m = *std::max_element(s.begin(), s.end());
    double z = 0.0;
    for (double v : s) z += std::exp(v - m);
    const double log_z = m + std::log(z);
    for (std::size_t k = 0; k < s.size(); ++k) probs(i, k) = std::exp(s[k] - log_z);
    total += log_z - s[static_cast<std::size_t>(targets[i])];
  }
  return total;
}

void check_targets(Op op, std::span<const int> targets, std::size_t rows, std::size_t classes) {
  if (targets.size() != rows)
    shape_error(op, std::to_string(targets.size()) + " targets for " + std::to_string(rows) + " rows");
  for (int t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= classes)
      fail(ErrorCode::kInvalidArgument, std::string(to_string(op)) + ": target " +
                                            std::to_string(t) + " outside [0, " +
                                            std::to_string(classes) + ")");
  }
}

void accumulate(Matrix& into, const Matrix& g) {
  for (std::size_t i = 0; i < into.size(); ++i) into[i] += g[i];
}

}  // namespace

Var Tape::push(Node node) {
  if (node.op == Op::kParameter || node.op == Op::kVariable) {
    node.needs_grad = true;
  } else if (node.op != Op::kDetach) {
    for (std::size_t p : node.parents) node.needs_grad = node.needs_grad || nodes_[p].needs_grad;
  }
  nodes_.push_back(std::move(node));
  return Var(nodes_.size() - 1);
}

const Tape::Node& Tape::node(Var v) const {
  require(v.index() < nodes_.size(), ErrorCode::kInvalidArgument, "variable not on this tape");
  return nodes_[v.index()];
}

const Matrix& Tape::value(Var v) const { return node(v).value; }

const Matrix& Tape::grad(Var v) const {
  const Node& n = node(v);
  require(n.grad.same_shape(n.value), ErrorCode::kInvalidArgument,
          "grad() queried before backward()");
  return n.grad;
}

Op Tape::op(Var v) const { return node(v).op; }

Var Tape::constant(Matrix value) {
  Node n;
  n.op = Op::kConstant;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::variable(Matrix value) {
  Node n;
  n.op = Op::kVariable;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::parameter(Parameter& p, Binding binding) {
  Node n;
  n.value = p.value;
  if (binding == Binding::kTrainable) {
    n.op = Op::kParameter;
    n.param = &p;
  } else {
    n.op = Op::kConstant;
  }
  return push(std::move(n));
}

Var Tape::affine(Var x, Var weight, Var bias) {
  const Matrix& xv = value(x);
  const Matrix& wv = value(weight);
  const Matrix& bv = value(bias);
  if (xv.cols() != wv.rows())
    shape_error(Op::kAffine, "input " + xv.shape_string() + " with weight " + wv.shape_string());
  if (bv.rows() != 1 || bv.cols() != wv.cols())
    shape_error(Op::kAffine, "bias " + bv.shape_string() + " for weight " + wv.shape_string());
  Node n;
  n.op = Op::kAffine;
  n.value = kernels::matmul(xv, wv);
  kernels::add_row_bias(n.value, bv);
  n.parents = {x.index(), weight.index(), bias.index()};
  return push(std::move(n));
}

Var Tape::relu(Var x) {
  Node n;
  n.op = Op::kRelu;
  n.value = value(x);
  for (double& v : n.value.values()) v = v > 0.0 ? v : 0.0;
  n.parents = {x.index()};
  return push(std::move(n));
}

Var Tape::tanh(Var x) {
  Node n;
  n.op = Op::kTanh;
  n.value = value(x);
  for (double& v : n.value.values()) v = std::tanh(v);
  n.parents = {x.index()};
  return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
  const Matrix& av = value(a);
  const Matrix& bv = value(b);
  if (!av.same_shape(bv)) shape_error(Op::kAdd, av.shape_string() + " + " + bv.shape_string());
  Node n;
  n.op = Op::kAdd;
  n.value = av;
  accumulate(n.value, bv);
  n.parents = {a.index(), b.index()};
  return push(std::move(n));
}

Var Tape::scale(Var x, double factor) {
  Node n;
  n.op = Op::kScale;
  n.value = value(x);
  for (double& v : n.value.values()) v *= factor;
  n.factor = factor;
  n.parents = {x.index()};
  return push(std::move(n));
}

Var Tape::sum(Var x) {
  double s = 0.0;
  for (double v : value(x).values()) s += v;
  Node n;
  n.op = Op::kSum;
  n.value = Matrix::scalar(s);
  n.parents = {x.index()};
  return push(std::move(n));
}

Var Tape::concat_rows(std::span<const Var> parts) {
  if (parts.empty()) shape_error(Op::kConcatRows, "no inputs");
  std::vector<Matrix> values;
  values.reserve(parts.size());
  Node n;
  n.op = Op::kConcatRows;
  for (Var p : parts) {
    const Matrix& v = value(p);
    if (v.cols() != value(parts.front()).cols())
      shape_error(Op::kConcatRows,
                  value(parts.front()).shape_string() + " with " + v.shape_string());
    values.push_back(v);
    n.parents.push_back(p.index());
  }
  n.value = vstack(values);
  return push(std::move(n));
}

Var Tape::squared_error(Var pred, Var target) {
  const Matrix& pv = value(pred);
  const Matrix& tv = value(target);
  if (!pv.same_shape(tv))
    shape_error(Op::kSquaredError, "prediction " + pv.shape_string() + " vs target " + tv.shape_string());
  double s = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) s += (pv[i] - tv[i]) * (pv[i] - tv[i]);
  Node n;
  n.op = Op::kSquaredError;
  n.value = Matrix::scalar(s);
  n.parents = {pred.index(), target.index()};
  return push(std::move(n));
}

Var Tape::softmax_cross_entropy(Var logits, std::span<const int> labels) {
  const Matrix& lv = value(logits);
  if (lv.rows() == 0 || lv.cols() == 0) shape_error(Op::kSoftmaxCrossEntropy, "empty logits");
  check_targets(Op::kSoftmaxCrossEntropy, labels, lv.rows(), lv.cols());
  Node n;
  n.op = Op::kSoftmaxCrossEntropy;
  n.value = Matrix::scalar(softmax_nll(lv, labels, n.cache));
  n.labels.assign(labels.begin(), labels.end());
  n.parents = {logits.index()};
  return push(std::move(n));
}

Var Tape::batch_dot_softmax(Var queries, Var keys, std::span<const int> targets) {
  const Matrix& qv = value(queries);
  const Matrix& kv = value(keys);
  if (qv.cols() != kv.cols())
    shape_error(Op::kBatchDotSoftmax, "queries " + qv.shape_string() + " vs keys " + kv.shape_string());
  if (kv.rows() == 0) shape_error(Op::kBatchDotSoftmax, "no keys");
  check_targets(Op::kBatchDotSoftmax, targets, qv.rows(), kv.rows());
  Node n;
  n.op = Op::kBatchDotSoftmax;
  const Matrix scores = kernels::matmul_nt(qv, kv);
  n.value = Matrix::scalar(softmax_nll(scores, targets, n.cache));
  n.labels.assign(targets.begin(), targets.end());
  n.parents = {queries.index(), keys.index()};
  return push(std::move(n));
}

Var Tape::grad_reverse(Var x) {
  Node n;
  n.op = Op::kGradReverse;
  n.value = value(x);
  n.factor = -1.0;
  n.parents = {x.index()};
  return push(std::move(n));
}

Var Tape::grad_scale(Var x, double factor) {
  Node n;
  n.op = Op::kGradScale;
  n.value = value(x);
  n.factor = factor;
  n.parents = {x.index()};
  return push(std::move(n));
}

Var Tape::detach(Var x) {
  Node n;
  n.op = Op::kDetach;
  n.value = value(x);
  n.parents = {x.index()};
  return push(std::move(n));
}

void Tape::backward(Var loss) {
  const Node& root = node(loss);
  require(root.value.rows() == 1 && root.value.cols() == 1, ErrorCode::kShapeMismatch,
          "backward: loss must be 1x1, got " + root.value.shape_string());

  const std::size_t last = loss.index();
  std::vector<char> reachable(last + 1, 0);
  reachable[last] = 1;
  for (std::size_t i = last + 1; i-- > 0;) {
    if (!reachable[i]) continue;
    if (nodes_[i].op == Op::kDetach) continue;
    for (std::size_t p : nodes_[i].parents) reachable[p] = 1;
  }

  for (auto& n : nodes_) n.grad = Matrix(n.value.rows(), n.value.cols());
  nodes_[last].grad(0, 0) = 1.0;

  for (std::size_t i = last + 1; i-- > 0;) {
    if (reachable[i] && nodes_[i].needs_grad) propagate(nodes_[i]);
  }
}

void Tape::propagate(Node& n) {
  const Matrix& g = n.grad;
  switch (n.op) {
    case Op::kConstant:
    case Op::kVariable:
    case Op::kDetach:
      break;
    case Op::kParameter:
      accumulate(n.param->grad, g);
      break;
    case Op::kAffine: {
      Node& x = nodes_[n.parents[0]];
      Node& w = nodes_[n.parents[1]];
      Node& b = nodes_[n.parents[2]];
      if (x.needs_grad) accumulate(x.grad, kernels::matmul_nt(g, w.value));
      if (w.needs_grad) accumulate(w.grad, kernels::matmul_tn(x.value, g));
      if (b.needs_grad) accumulate(b.grad, kernels::column_sums(g));
      break;
    }
    case Op::kRelu: {
      Node& x = nodes_[n.parents[0]];
      for (std::size_t i = 0; i < g.size(); ++i)
        if (x.value[i] > 0.0) x.grad[i] += g[i];
      break;
    }
    case Op::kTanh: {
      Node& x = nodes_[n.parents[0]];
      for (std::size_t i = 0; i < g.size(); ++i) x.grad[i] += g[i] * (1.0 - n.value[i] * n.value[i]);
      break;
    }
    case Op::kAdd:
      accumulate(nodes_[n.parents[0]].grad, g);
      accumulate(nodes_[n.parents[1]].grad, g);
      break;
    case Op::kScale:
    case Op::kGradReverse:
    case Op::kGradScale: {
      Node& x = nodes_[n.parents[0]];
      for (std::size_t i = 0; i < g.size(); ++i) x.grad[i] += n.factor * g[i];
      break;
    }
    case Op::kSum: {
      Node& x = nodes_[n.parents[0]];
      const double s = g(0, 0);
      for (double& v : x.grad.values()) v += s;
      break;
    }
    case Op::kConcatRows: {
      std::size_t offset = 0;
      for (std::size_t p : n.parents) {
        Node& part = nodes_[p];
        for (std::size_t i = 0; i < part.grad.size(); ++i) part.grad[i] += g[offset + i];
        offset += part.grad.size();
      }
      break;
    }
    case Op::kSquaredError: {
      Node& pred = nodes_[n.parents[0]];
      Node& target = nodes_[n.parents[1]];
      const double s = g(0, 0);
      for (std::size_t i = 0; i < pred.value.size(); ++i) {
        const double d = 2.0 * (pred.value[i] - target.value[i]) * s;
        pred.grad[i] += d;
        target.grad[i] -= d;
      }
      break;
    }
    case Op::kSoftmaxCrossEntropy: {
      Node& logits = nodes_[n.parents[0]];
      const double s = g(0, 0);
      for (std::size_t i = 0; i < n.cache.rows(); ++i) {
        for (std::size_t k = 0; k < n.cache.cols(); ++k) {
          const double onehot = static_cast<std::size_t>(n.labels[i]) == k ? 1.0 : 0.0;
          logits.grad(i, k) += s * (n.cache(i, k) - onehot);
        }
      }
      break;
    }
    case Op::kBatchDotSoftmax: {
      Node& q = nodes_[n.parents[0]];
      Node& keys = nodes_[n.parents[1]];
      const double s = g(0, 0);
      Matrix dscores = n.cache;
      for (std::size_t i = 0; i < dscores.rows(); ++i) {
        dscores(i, static_cast<std::size_t>(n.labels[i])) -= 1.0;
        for (double& v : dscores.row(i)) v *= s;
      }
      if (q.needs_grad) accumulate(q.grad, kernels::matmul(dscores, keys.value));
      if (keys.needs_grad) accumulate(keys.grad, kernels::matmul_tn(dscores, q.value));
      break;
    }
  }
}

}  // namespace rgm::ad
