#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "flowcf/error.hpp"
#include "flowcf/rng.hpp"

namespace flowcf {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ')';
  return os.str();
}

namespace autograd {

// Thread-local so independent graphs can evaluate in parallel.
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
inline bool grad_enabled() { return grad_mode_flag(); }
inline void set_grad_enabled(bool on) { grad_mode_flag() = on; }

struct NoGradGuard {
  NoGradGuard() : prev_(grad_enabled()) { set_grad_enabled(false); }
  ~NoGradGuard() { set_grad_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Optional full finiteness scan after every op (slow; enabled in tests).
inline bool& finite_check_flag() {
  thread_local bool enabled = false;
  return enabled;
}
inline bool finite_checks_enabled() { return finite_check_flag(); }
inline void set_finite_checks(bool on) { finite_check_flag() = on; }

}  // namespace autograd

// Dense row-major tensor with reverse-mode automatic differentiation.
// A Tensor is a shared handle to a graph node; ops record parents and a
// backward closure when gradients are required, otherwise the graph is
// not retained and evaluation is pure data flow.
template <typename T>
class Tensor {
  struct Node;
  using NodePtr = std::shared_ptr<Node>;

  struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // allocated lazily during backward
    bool requires_grad = false;
    std::string op;  // empty for leaves
    std::vector<NodePtr> parents;
    // Accumulates into parents' grads; receives the node's handle so the
    // closure can read its own data/grad without creating a ref cycle.
    std::function<void(Tensor&)> backward;

    bool is_leaf() const { return op.empty(); }
  };

 public:
  using value_type = T;
  using BackwardFn = std::function<void(Tensor&)>;

  Tensor() = default;

  // ---- factories -------------------------------------------------------

  static Tensor zeros(const Shape& shape, bool requires_grad = false) {
    return from_vec(shape, std::vector<T>(shape_numel(shape), T(0)),
                    requires_grad);
  }

  static Tensor full(const Shape& shape, T v, bool requires_grad = false) {
    return from_vec(shape, std::vector<T>(shape_numel(shape), v),
                    requires_grad);
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return from_vec({1}, {v}, requires_grad);
  }

  static Tensor from_vec(const Shape& shape, std::vector<T> values,
                         bool requires_grad = false) {
    if (shape_numel(shape) != values.size()) {
      throw ShapeError("Tensor: shape " + shape_str(shape) + " wants " +
                       std::to_string(shape_numel(shape)) + " values, got " +
                       std::to_string(values.size()));
    }
    auto node = std::make_shared<Node>();
    node->shape = shape;
    node->data = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor randn(const Shape& shape, Rng& rng, T stddev = T(1),
                      bool requires_grad = false) {
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(rng.normal()) * stddev;
    return from_vec(shape, std::move(v), requires_grad);
  }

  static Tensor uniform(const Shape& shape, Rng& rng, T lo, T hi,
                        bool requires_grad = false) {
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(rng.uniform(double(lo), double(hi)));
    return from_vec(shape, std::move(v), requires_grad);
  }

  // Graph-node factory used by every primitive op. Parents and the backward
  // closure are retained only when some parent tracks gradients and grad
  // mode is on.
  static Tensor make(Shape shape, std::vector<T> data,
                     std::vector<Tensor> parents, std::string op,
                     BackwardFn bw) {
    if (shape_numel(shape) != data.size()) {
      throw ShapeError(op + ": produced " + std::to_string(data.size()) +
                       " values for shape " + shape_str(shape));
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    bool needs = false;
    if (autograd::grad_enabled()) {
      for (const auto& p : parents) needs = needs || p.requires_grad();
    }
    if (needs) {
      node->requires_grad = true;
      node->op = op;
      node->parents.reserve(parents.size());
      for (auto& p : parents) node->parents.push_back(p.node_);
      node->backward = std::move(bw);
    }
    if (autograd::finite_checks_enabled()) {
      for (const T& x : node->data) {
        if (!std::isfinite(static_cast<double>(x))) {
          throw ValueError("non-finite value produced by node '" + op + "'");
        }
      }
    }
    return Tensor(std::move(node));
  }

  // ---- basic accessors ---------------------------------------------------

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return check().shape; }
  std::size_t ndim() const { return check().shape.size(); }
  std::size_t dim(std::size_t i) const { return check().shape.at(i); }
  std::size_t size() const { return check().data.size(); }
  bool requires_grad() const { return check().requires_grad; }
  bool is_leaf() const { return check().is_leaf(); }
  const std::string& op_name() const { return check().op; }

  void set_requires_grad(bool on) {
    Node& n = check();
    if (!n.is_leaf())
      throw Error("set_requires_grad: only leaf tensors may be toggled");
    n.requires_grad = on;
  }

  std::span<const T> data() const { return {check().data}; }
  std::span<T> mutable_data() { return {check().data}; }

  T value() const {
    const Node& n = check();
    if (n.data.size() != 1)
      throw ShapeError("Tensor::value: tensor has " +
                       std::to_string(n.data.size()) + " elements, wanted 1");
    return n.data[0];
  }

  T at(std::size_t flat) const { return check().data.at(flat); }

  // ---- gradients ---------------------------------------------------------

  bool has_grad() const { return !check().grad.empty(); }

  std::span<const T> grad() const {
    const Node& n = check();
    if (n.grad.empty())
      throw Error("Tensor::grad: no gradient present (run backward first)");
    return {n.grad};
  }

  // Ensures a zeroed gradient buffer exists and exposes it for accumulation.
  std::span<T> grad_accum() {
    Node& n = check();
    if (n.grad.empty()) n.grad.assign(n.data.size(), T(0));
    return {n.grad};
  }

  void zero_grad() {
    Node& n = check();
    n.grad.clear();
    n.grad.shrink_to_fit();
  }

  Tensor detach() const {
    const Node& n = check();
    return from_vec(n.shape, n.data, false);
  }

  // Reverse-mode sweep from a scalar output. Visits each node exactly once
  // in reverse topological order; frees non-leaf gradient buffers as soon
  // as they have been consumed to bound peak memory.
  void backward() {
    Node& root = check();
    if (root.data.size() != 1)
      throw ShapeError("backward: output must be a scalar, got shape " +
                       shape_str(root.shape));
    if (!root.requires_grad)
      throw Error(
          "backward: output does not require grad (detached graph or grad "
          "mode off)");
    if (!std::isfinite(static_cast<double>(root.data[0])))
      throw ValueError("backward: loss value is non-finite at node '" +
                       root.op + "'");

    std::vector<Node*> order = topo_order(&root);
    root.grad.assign(1, T(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node* node = *it;
      if (node->backward && !node->grad.empty()) {
        Tensor self(shared_from_node(node));
        node->backward(self);
      }
      if (!node->is_leaf()) {
        node->grad.clear();
        node->grad.shrink_to_fit();
      }
    }
  }

  // ---- graph introspection ------------------------------------------------

  std::size_t num_parents() const { return check().parents.size(); }
  Tensor parent(std::size_t i) const { return Tensor(check().parents.at(i)); }
  const void* node_id() const { return node_.get(); }

  friend bool same_node(const Tensor& a, const Tensor& b) {
    return a.node_ == b.node_;
  }

 private:
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  Node& check() {
    if (!node_) throw Error("Tensor: used before initialization");
    return *node_;
  }
  const Node& check() const {
    if (!node_) throw Error("Tensor: used before initialization");
    return *node_;
  }

  // The graph holds shared_ptrs; recover one for a raw node seen during the
  // sweep (the root keeps everything alive for the duration).
  NodePtr shared_from_node(Node* raw) {
    if (raw == node_.get()) return node_;
    // Parents are reachable only through shared_ptr chains from the root,
    // so aliasing a non-owning shared_ptr is safe within backward().
    return NodePtr(NodePtr(), raw);
  }

  static std::vector<Node*> topo_order(Node* root) {
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    // Iterative DFS: (node, next-parent-index) frames.
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
      auto& [node, idx] = stack.back();
      if (idx < node->parents.size()) {
        Node* p = node->parents[idx++].get();
        if (p->requires_grad && visited.insert(p).second) {
          stack.emplace_back(p, 0);
        }
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
    return order;
  }

  NodePtr node_;

  template <typename U>
  friend bool depends_on(const Tensor<U>& out, const Tensor<U>& input);
};

// True when `input`'s node is reachable from `out` through recorded graph
// edges. Used for structural loss assertions.
template <typename T>
bool depends_on(const Tensor<T>& out, const Tensor<T>& input) {
  if (!out.defined() || !input.defined()) return false;
  using Node = typename Tensor<T>::Node;
  const Node* target = out.node_.get();
  const Node* needle = input.node_.get();
  std::unordered_set<const Node*> visited;
  std::vector<const Node*> stack{target};
  while (!stack.empty()) {
    const Node* n = stack.back();
    stack.pop_back();
    if (n == needle) return true;
    if (!visited.insert(n).second) continue;
    for (const auto& p : n->parents) stack.push_back(p.get());
  }
  return false;
}

}  // namespace flowcf
