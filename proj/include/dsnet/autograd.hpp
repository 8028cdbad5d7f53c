#pragma once

#include <dsnet/tensor.hpp>

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

namespace dsnet {

template <typename Scalar>
struct Node;

template <typename Scalar>
using BackwardFn = std::function<void(Node<Scalar>&)>;

/// One executed operation (or a leaf) of the differentiation graph.
template <typename Scalar>
struct Node {
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  bool requires_grad = false;
  std::uint64_t sequence = 0;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn<Scalar> backward;

  bool is_leaf() const { return !backward; }

  /// Gradient accumulator, allocated as zeros on first use.
  Tensor<Scalar>& grad_buffer() {
    if (grad.shape() != value.shape()) grad = Tensor<Scalar>(value.shape());
    return grad;
  }
};

/// Handle to a graph node. Copies share the node.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<Scalar> value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node<Scalar>> node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<Scalar>& value() const { return node_->value; }
  /// Mutable access for optimizers and checkpoint loading; never call mid-graph.
  Tensor<Scalar>& mutable_value() { return node_->value; }
  const Tensor<Scalar>& grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.defined() && node_->grad.shape() == node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  const Shape& shape() const { return node_->value.shape(); }
  Index dim(int axis) const { return node_->value.dim(axis); }
  Index size() const { return node_->value.size(); }
  void zero_grad() { node_->grad = Tensor<Scalar>(); }

  Node<Scalar>& node() const { return *node_; }
  const std::shared_ptr<Node<Scalar>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node<Scalar>> node_;
};

/// Trainable leaf: a fresh node with requires_grad set.
template <typename Scalar>
Var<Scalar> parameter(Tensor<Scalar> value) {
  return Var<Scalar>(std::move(value), true);
}

template <typename Scalar>
Var<Scalar> constant(Tensor<Scalar> value) {
  return Var<Scalar>(std::move(value), false);
}

/// The nodes reachable from a root that take part in differentiation, in forward
/// execution order. Backward walks this list back to front.
template <typename Scalar>
class Graph {
 public:
  static Graph trace(const Var<Scalar>& root);

  const std::vector<Node<Scalar>*>& nodes() const { return nodes_; }

 private:
  std::vector<Node<Scalar>*> nodes_;
};

/// Seeds d(loss)/d(loss) = 1 and propagates to every requires_grad node. Leaf
/// gradients accumulate across calls; interior gradients are released.
template <typename Scalar>
void backward(const Var<Scalar>& loss);

/// Disables graph recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Makes every kernel check its output for NaN/Inf on the current thread.
class VerifyModeGuard {
 public:
  VerifyModeGuard();
  ~VerifyModeGuard();
  VerifyModeGuard(const VerifyModeGuard&) = delete;
  VerifyModeGuard& operator=(const VerifyModeGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();
bool verify_mode();

/// Counts multiply-accumulates issued by kernels on the current thread while alive.
class MacCounter {
 public:
  MacCounter();
  ~MacCounter();
  MacCounter(const MacCounter&) = delete;
  MacCounter& operator=(const MacCounter&) = delete;

  std::uint64_t count() const;

 private:
  std::uint64_t start_;
  bool previous_;
};

namespace detail {

std::uint64_t next_sequence();
void count_macs(std::uint64_t macs);

/// Wraps a kernel result into a node. Records `backward` only when recording is
/// enabled and some input requires a gradient.
template <typename Scalar>
Var<Scalar> record(Tensor<Scalar> value, std::vector<Var<Scalar>> inputs, const char* op,
                   BackwardFn<Scalar> backward);

/// Adds `g` into the input's gradient when that input participates.
template <typename Scalar>
void accumulate(Node<Scalar>& input, const Tensor<Scalar>& g);

}  // namespace detail

}  // namespace dsnet
