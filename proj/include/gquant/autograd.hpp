#pragma once

// Tape-based reverse-mode differentiation over dense tensors.
//
// Every operation appends a node to a Tape; node ids are therefore already in
// topological order and backward() simply walks them in reverse. Gradients
// accumulate additively, so a value used twice receives the sum of both paths.
// A tape is single-threaded; independent tapes may live on different threads.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "gquant/tensor.hpp"

namespace gquant {

class Tape;

/// Handle to a value recorded on a tape.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  /// Gradient accumulated by the last backward(); empty if not differentiable.
  std::span<const double> grad() const;
  bool requires_grad() const;

  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Receives the tape and the id of the node being back-propagated.
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// A constant: no gradient is tracked.
  Var input(Tensor value);
  /// A differentiable leaf.
  Var param(Tensor value);

  /// Appends an op result. It requires grad iff any parent does; `backward`
  /// runs only in that case and must propagate into parents that need it.
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn backward);

  /// Seeds d(root)/d(root) = 1 and back-propagates. Root must hold one element.
  void backward(Var root);

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool needs_grad(std::size_t id) const { return nodes_.at(id).value.requires_grad(); }
  std::span<double> grad(std::size_t id) { return nodes_.at(id).value.grad(); }
  std::span<const double> grad(std::size_t id) const { return nodes_.at(id).value.grad(); }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    BackwardFn backward;
  };

  void check_owned(Var v) const;

  std::vector<Node> nodes_;
};

namespace ops {

/// Same shapes, or `b` one-dimensional and equal to the last dimension of `a`.
Var add(Var a, Var b);
/// Elementwise product of equally shaped values.
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var sum(Var a);
Var mean(Var a);

/// [n, k] x [k, m] -> [n, m]
Var matmul(Var a, Var b);
/// x [batch, in_ch, len], w [out_ch, in_ch, k], bias [out_ch]; stride 1, no padding.
Var conv1d(Var x, Var w, Var bias);
Var relu(Var a);
/// Non-overlapping windows of `k` over the last axis of [batch, ch, len].
Var max_pool1d(Var x, std::size_t k);
/// [batch, ch, len] -> [batch, ch]
Var global_avg_pool(Var x);
/// Row-wise softmax of [n, c].
Var softmax(Var logits);
Var softplus(Var a);
Var tanh(Var a);

/// sum_i w[y_i] * -log softmax(logits_i)[y_i] / sum_i w[y_i]
Var weighted_cross_entropy(Var logits, std::span<const int> labels, std::span<const double> class_weights);

}  // namespace ops

}  // namespace gquant
