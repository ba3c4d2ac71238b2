#pragma once

// Minimal reverse-mode automatic differentiation over dense double tensors.
//
// A Var is a shared handle to a graph node holding a value buffer, an
// optional gradient buffer and a closure that pushes its gradient into its
// parents. Parameters are leaf nodes with requires_grad set; their gradient
// buffers are allocated on first touch and released by the optimizer, so an
// empty grad means "not reached by the last backward pass".

#include <cassert>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace sbir {

using Shape = std::vector<int>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  bool requires_grad = false;

  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

namespace detail {
inline thread_local bool grad_enabled = true;
}

inline bool grad_enabled() { return detail::grad_enabled; }

// Disables graph recording for the lifetime of the guard (inference, sampling,
// frozen teacher/critic evaluation).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Var constant(Shape shape, std::vector<double> value) {
    if (numel(shape) != value.size())
      throw std::invalid_argument("Var::constant: shape " + shape_str(shape) +
                                  " does not match " + std::to_string(value.size()) + " values");
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    return Var(std::move(n));
  }
  static Var zeros(Shape shape) {
    std::vector<double> v(numel(shape), 0.0);
    return constant(std::move(shape), std::move(v));
  }
  static Var parameter(Shape shape, std::vector<double> value) {
    Var v = constant(std::move(shape), std::move(value));
    v.node_->requires_grad = true;
    return v;
  }

  bool defined() const { return static_cast<bool>(node_); }
  Node& node() const { return *node_; }
  const std::shared_ptr<Node>& ptr() const { return node_; }

  const Shape& shape() const { return node_->shape; }
  int dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->value.size(); }
  std::span<const double> value() const { return node_->value; }
  std::span<double> mutable_value() { return node_->value; }
  const std::vector<double>& grad() const { return node_->grad; }
  bool requires_grad() const { return node_->requires_grad; }
  double item() const {
    if (node_->value.size() != 1) throw std::logic_error("Var::item on non-scalar " + shape_str(shape()));
    return node_->value[0];
  }
  double operator[](std::size_t i) const { return node_->value[i]; }

  // Returns a detached copy (no graph, no grad).
  Var detach() const { return constant(shape(), node_->value); }

 private:
  std::shared_ptr<Node> node_;
};

// Builds an op result. If recording is off or no parent needs a gradient the
// node is created as a plain constant and the closure is dropped.
inline Var make_op(Shape shape, std::vector<double> value, std::vector<Var> parents,
                   std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  assert(numel(n->shape) == n->value.size());
  if (grad_enabled()) {
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (any) {
      n->requires_grad = true;
      n->parents.reserve(parents.size());
      for (auto& p : parents) n->parents.push_back(p.ptr());
      n->backward_fn = std::move(backward_fn);
    }
  }
  return Var(std::move(n));
}

// Gradient accumulator for parent `i` of `self`, or nullptr if that parent
// does not take gradients.
inline double* parent_grad(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  if (!p.requires_grad) return nullptr;
  return p.ensure_grad().data();
}

inline const std::vector<double>& parent_value(const Node& self, std::size_t i) {
  return self.parents[i]->value;
}

// Backpropagates d(root)/d(node) into every reachable node. The root must be
// a scalar. Gradients accumulate, so callers zero parameters between steps.
inline void backward(const Var& root, double seed = 1.0) {
  if (root.size() != 1) throw std::logic_error("backward: root must be scalar, got " + shape_str(root.shape()));
  if (!root.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, bool>> stack{{root.ptr().get(), false}};
  while (!stack.empty()) {
    auto [n, expanded] = stack.back();
    stack.pop_back();
    if (expanded) {
      order.push_back(n);
      continue;
    }
    if (!seen.insert(n).second) continue;
    stack.push_back({n, true});
    for (const auto& p : n->parents)
      if (p->requires_grad && !seen.count(p.get())) stack.push_back({p.get(), false});
  }

  root.node().ensure_grad()[0] += seed;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  // Interior buffers are dead after the sweep.
  for (Node* n : order)
    if (!n->parents.empty()) std::vector<double>().swap(n->grad);
}

}  // namespace sbir
