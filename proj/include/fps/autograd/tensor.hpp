#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// arrays. A Var is a handle to a graph node; operations on Vars whose
// inputs require gradients record a backward closure on the result node.

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <vector>

#include "fps/common.hpp"

namespace fps::ag {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<T>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  static Var leaf(Shape shape, std::vector<T> value, bool requires_grad = false) {
    require(ag::numel(shape) == value.size(), ErrorKind::shape,
            "leaf: value count does not match shape " + shape_str(shape));
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return Var(std::move(n));
  }

  static Var zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = ag::numel(shape);
    return leaf(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
  }

  static Var scalar(T v) { return leaf({1}, {v}); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  std::vector<T>& value() { return node_->value; }
  const std::vector<T>& value() const { return node_->value; }
  std::vector<T>& grad() { return node_->grad; }
  const std::vector<T>& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool r) { node_->requires_grad = r; }
  T item() const {
    require(numel() == 1, ErrorKind::shape, "item: tensor is not a scalar");
    return node_->value[0];
  }
  Node<T>* node() const { return node_.get(); }
  const std::shared_ptr<Node<T>>& ptr() const { return node_; }
  void zero_grad() { node_->grad.clear(); }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Creates the result node of an op. The backward closure is only kept when
/// some parent requires a gradient; it receives the result node and must
/// accumulate into parents that require gradients.
template <class T>
Var<T> make_result(Shape shape, std::vector<T> value, std::vector<Var<T>> parents,
                   std::function<void(Node<T>&)> backward) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool any = false;
  for (const auto& p : parents) any = any || (p.defined() && p.requires_grad());
  if (any) {
    n->requires_grad = true;
    for (auto& p : parents) n->parents.push_back(p.ptr());
    n->backward = std::move(backward);
  }
  return Var<T>(std::move(n));
}

/// Accumulates d(root)/d(leaf) into every reachable node's grad.
template <class T>
void backward(const Var<T>& root) {
  require(root.numel() == 1, ErrorKind::shape, "backward: root must be a scalar");
  if (!root.requires_grad()) return;
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node(), 0}};
  seen.insert(root.node());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<T>* p = n->parents[next++].get();
      if (p && p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  root.node()->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

}  // namespace fps::ag
