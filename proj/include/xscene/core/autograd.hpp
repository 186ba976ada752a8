#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "xscene/core/tensor.hpp"

namespace xscene {

template <typename T>
struct Node;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

/// Reverse-mode rule of one node: reads `self.grad` and accumulates into the
/// gradient slots of `self.parents` (see grad_slot).
template <typename T>
using BackwardFn = std::function<void(Node<T>& self)>;

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until something is accumulated into it
  std::vector<NodePtr<T>> parents;
  BackwardFn<T> backward;
  const char* op = "leaf";
  bool requires_grad = false;

  bool is_leaf() const noexcept { return !backward; }
};

/// Gradient accumulator of parent `i`, zero-initialised on first use.
/// Returns nullptr when that parent does not take part in differentiation.
template <typename T>
Tensor<T>* grad_slot(Node<T>& self, std::size_t i) {
  auto& p = self.parents[i];
  if (!p || !p->requires_grad) return nullptr;
  if (p->grad.shape() != p->value.shape() || p->grad.size() != p->value.size()) {
    p->grad = Tensor<T>(p->value.shape(), T(0));
  }
  return &p->grad;
}

/// Handle to a node in a dynamically built computation graph. Copies share
/// the node; use detach() or clone the value for an independent leaf.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(NodePtr<T> node) : node_(std::move(node)) {}

  static Var leaf(Tensor<T> value, bool requires_grad) {
    if (!value.all_finite()) throw NumericError("non-finite value in graph input");
    auto n = std::make_shared<Node<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
  }
  static Var constant(Tensor<T> value) { return leaf(std::move(value), false); }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() {
    if (!node_->is_leaf()) throw Error("only leaf values may be modified in place");
    return node_->value;
  }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  const char* op() const { return node_->op; }

  bool has_grad() const { return node_ && !node_->grad.empty(); }
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T> grad_or_zeros() const {
    return has_grad() ? node_->grad : Tensor<T>(node_->value.shape(), T(0));
  }
  void zero_grad() {
    if (node_) node_->grad = Tensor<T>();
  }

  Var detach() const { return constant(node_->value); }

  const NodePtr<T>& node() const noexcept { return node_; }

 private:
  NodePtr<T> node_;
};

namespace detail {
inline thread_local bool grad_enabled = true;
}

/// While alive, new operations record no backward graph on this thread.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Records the result of an operation. If no input requires a gradient the
/// result is a constant and `backward` is dropped.
template <typename T>
Var<T> make_op(const char* op, Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn<T> backward) {
  if (!value.all_finite()) throw NumericError(std::string("non-finite result in op '") + op + "'");
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->op = op;
  if (detail::grad_enabled) {
    for (const auto& in : inputs) {
      if (in.requires_grad()) n->requires_grad = true;
    }
  }
  if (n->requires_grad) {
    n->parents.reserve(inputs.size());
    for (const auto& in : inputs) n->parents.push_back(in.node());
    n->backward = std::move(backward);
  }
  return Var<T>(std::move(n));
}

/// Back-propagates from a scalar. Leaf gradients accumulate; interior
/// gradients are released once consumed.
template <typename T>
void backward(const Var<T>& root) {
  if (!root.defined()) throw Error("backward on undefined variable");
  if (root.size() != 1) throw ShapeError("backward requires a scalar, got " + shape_str(root.shape()));
  if (!root.requires_grad()) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p && p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  Node<T>* r = root.node().get();
  if (r->grad.size() != 1) r->grad = Tensor<T>(r->value.shape(), T(0));
  r->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->is_leaf() || n->grad.empty()) continue;
    n->backward(*n);
    n->grad = Tensor<T>();
  }
}

}  // namespace xscene
