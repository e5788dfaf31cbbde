#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rgm/matrix.hpp"

namespace rgm::ad {

/// A learnable tensor. Gradients accumulate across every loss term that
/// reaches it during one backward pass and are cleared by the optimizer step.
struct Parameter {
  Parameter() = default;
  Parameter(std::string id, Matrix value);

  std::string id;
  Matrix value;
  Matrix grad;

  void zero_grad() { grad.fill(0.0); }
};

enum class Op : std::uint8_t {
  kConstant,
  kVariable,
  kParameter,
  kAffine,
  kRelu,
  kTanh,
  kAdd,
  kScale,
  kSum,
  kConcatRows,
  kSquaredError,
  kSoftmaxCrossEntropy,
  kBatchDotSoftmax,
  kGradReverse,
  kGradScale,
  kDetach,
};

std::string_view to_string(Op op);

/// Handle to a node on a Tape. Only meaningful for the tape that issued it.
class Var {
 public:
  Var() = default;
  std::size_t index() const noexcept { return index_; }
  friend bool operator==(Var, Var) = default;

 private:
  friend class Tape;
  explicit Var(std::size_t index) : index_(index) {}
  std::size_t index_ = static_cast<std::size_t>(-1);
};

/// Whether a parameter enters the tape as a trainable leaf or as a constant
/// snapshot of its current value.
enum class Binding { kTrainable, kFrozen };

/// Reverse-mode tape over dense matrices. Nodes are appended in evaluation
/// order, which is already a topological order, so backward is a single
/// reverse sweep over the nodes reachable from the loss.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  // Leaves.
  Var constant(Matrix value);
  /// Leaf whose gradient is kept after backward (input-gradient queries).
  Var variable(Matrix value);
  Var parameter(Parameter& p, Binding binding = Binding::kTrainable);

  // Primitives. Shapes are checked eagerly; a mismatch throws
  // Error(kShapeMismatch) naming the op and both shapes.
  Var affine(Var x, Var weight, Var bias);  // x W + b, b is 1 x out
  Var relu(Var x);                          // subgradient 0 at 0
  Var tanh(Var x);
  Var add(Var a, Var b);
  Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }
  Var scale(Var x, double factor);
  Var sum(Var x);  // sum of all entries, 1x1
  Var concat_rows(std::span<const Var> parts);
  /// sum_ij (pred - target)^2
  Var squared_error(Var pred, Var target);
  /// sum_i -log softmax(logits_i)[labels_i]
  Var softmax_cross_entropy(Var logits, std::span<const int> labels);
  /// sum_i -log softmax_k(q_i . key_k)[targets_i]
  Var batch_dot_softmax(Var queries, Var keys, std::span<const int> targets);
  /// Identity forward, upstream gradient negated on the way back.
  Var grad_reverse(Var x);
  /// Identity forward, upstream gradient multiplied by `factor`.
  Var grad_scale(Var x, double factor);
  /// Identity forward, no gradient flows back.
  Var detach(Var x);

  /// Accumulates d(loss)/d(theta) into every reachable trainable parameter.
  /// Throws if `loss` is not 1x1. Node gradients from the previous backward
  /// call are discarded first.
  void backward(Var loss);

  const Matrix& value(Var v) const;
  /// Gradient of the last backward's loss w.r.t. node `v` (zeros if unreached).
  const Matrix& grad(Var v) const;
  Op op(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Op op = Op::kConstant;
    Matrix value;
    Matrix grad;
    std::vector<std::size_t> parents;
    Parameter* param = nullptr;
    bool needs_grad = false;
    double factor = 0.0;
    std::vector<int> labels;
    Matrix cache;  // softmax probabilities for the likelihood ops
  };

  Var push(Node node);
  const Node& node(Var v) const;
  void propagate(Node& n);

  std::vector<Node> nodes_;
};

}  // namespace rgm::ad
