#pragma once

// Minimal reverse-mode differentiation over dense double tensors.
//
// A Tape records every operation of one forward evaluation. Nodes are
// appended after their inputs, so the recording order is a topological
// order and backward() simply walks it in reverse.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "gst/tensor.hpp"

namespace gst {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while its
/// Tape is alive.
class Value {
 public:
  Value() = default;

  const Tensor& value() const;
  /// Accumulated gradient from the last backward() call. Zero tensor when
  /// the node did not receive any gradient.
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;

  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Value(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Propagates the gradient of node `self` into its parents' buffers.
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf that receives a gradient.
  Value variable(Tensor value);
  /// Leaf that never receives a gradient.
  Value constant(Tensor value);

  /// Records an operation output. `op` names the operation in error
  /// messages; a non-finite result raises NumericError.
  Value record(const char* op, Tensor value, std::span<const Value> parents,
               BackwardFn backward);
  /// Output that is detached from every ancestor.
  Value record_detached(const char* op, Tensor value);

  /// Runs reverse accumulation from a single-element loss. Gradient buffers
  /// are reset first, so repeated calls yield identical gradients.
  void backward(Value loss);

  /// Gradient buffer of node `id`, allocated as zeros on first use.
  Tensor& grad_buffer(std::size_t id);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    BackwardFn backward;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  Tensor empty_grad_;
};

namespace ops {

Value add(Value a, Value b);
Value sub(Value a, Value b);
Value mul(Value a, Value b);
Value add_scalar(Value a, double c);
Value scale(Value a, double c);
/// (m x k) * (k x n). Rank 1 operands are treated as a single row.
Value matmul(Value a, Value b);
/// x * w + bias, with bias of length n added to every row.
Value affine(Value x, Value w, Value bias);
/// Elementwise max(x, 0).
Value relu_plus(Value a);
Value log(Value a);
Value exp(Value a);
/// Sum of all elements, as a scalar.
Value sum(Value a);
/// Mean of all elements, as a scalar.
Value mean(Value a);
/// Rows of `a` picked by `indices` (repeats allowed).
Value gather_rows(Value a, std::vector<std::size_t> indices);
/// Row-wise Softmax(x / tau) over the last dimension.
Value softmax_tau(Value logits, double tau);
/// Row-wise log Softmax(x) over the last dimension.
Value log_softmax(Value logits);
/// Identity forward, zero gradient backward.
Value stop_grad(Value a);
Value reshape(Value a, Shape shape);
/// Averages consecutive groups of `group` rows: (r*group x n) -> (r x n).
Value row_group_mean(Value a, std::size_t group);
/// Each row replaced by its maximum; the gradient goes to the first argmax.
Value row_max_broadcast(Value a);
/// Sum over elements of the Bernoulli negative log-likelihood of `targets`
/// under `logits`, as a scalar.
Value bce_with_logits_sum(Value logits, const Tensor& targets);

}  // namespace ops

inline Value operator+(Value a, Value b) { return ops::add(a, b); }
inline Value operator-(Value a, Value b) { return ops::sub(a, b); }
inline Value operator*(Value a, Value b) { return ops::mul(a, b); }

}  // namespace gst
