#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "otsvad/core/error.hpp"

namespace otsvad {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {

inline thread_local bool grad_enabled = true;

template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated lazily, same size as value
  bool requires_grad = false;
  bool grad_touched = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward_fn;

  T* grad_data() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    grad_touched = true;
    return grad.data();
  }
};

}  // namespace detail

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_enabled; }

// Reference-semantics handle on a node of the autodiff graph. Copies alias
// the same storage; use clone() for a deep copy.
template <class T>
class Tensor {
 public:
  using Node = detail::Node<T>;
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    n->value.assign(shape_numel(shape), T(0));
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor full(Shape shape, T v, bool requires_grad = false) {
    auto t = zeros(std::move(shape), requires_grad);
    std::fill(t.node_->value.begin(), t.node_->value.end(), v);
    return t;
  }

  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (shape_numel(shape) != values.size())
      throw ShapeError("Tensor::from: shape " + shape_str(shape) + " does not hold " +
                       std::to_string(values.size()) + " values");
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  const char* op() const { return node_->op; }

  std::span<T> values() { return node_->value; }
  std::span<const T> values() const { return node_->value; }
  const std::vector<T>& vec() const { return node_->value; }
  T* data() { return node_->value.data(); }
  const T* data() const { return node_->value.data(); }
  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }

  // Empty span when no gradient has been accumulated.
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return {node_->grad_data(), numel()}; }
  bool has_grad() const { return node_->grad_touched; }
  void zero_grad() {
    std::fill(node_->grad.begin(), node_->grad.end(), T(0));
    node_->grad_touched = false;
  }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  Tensor clone(bool requires_grad = false) const {
    return from(shape(), node_->value, requires_grad);
  }
  // Shares no graph history; values are copied.
  Tensor detach() const { return clone(false); }

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

  // Reverse-mode sweep from a scalar (seed 1) or from an explicit seed.
  void backward() const {
    if (numel() != 1) throw ShapeError("backward() requires a scalar, got " + shape_str(shape()));
    backward(std::vector<T>{T(1)});
  }

  void backward(const std::vector<T>& seed) const {
    if (seed.size() != numel()) throw ShapeError("backward seed size mismatch");
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    // Iterative post-order DFS; graphs can be deep (LSTM chains, many layers).
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, idx] = stack.back();
      if (idx < n->parents.size()) {
        Node* p = n->parents[idx++].get();
        if (p->requires_grad && !seen.count(p)) {
          seen.insert(p);
          stack.emplace_back(p, 0);
        }
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    T* g = node_->grad_data();
    for (std::size_t i = 0; i < seed.size(); ++i) g[i] += seed[i];
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if ((*it)->backward_fn) (*it)->backward_fn();
    }
  }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

template <class T>
void check_finite(const Node<T>& n) {
  for (const T v : n.value) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite output in op '") + n.op + "'");
  }
}

// Builds the result node of an op. The backward closure is attached only
// when some parent participates in differentiation.
template <class T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value,
                      std::vector<std::shared_ptr<Node<T>>> parents) {
  auto n = std::make_shared<Node<T>>();
  n->op = op;
  n->shape = std::move(shape);
  n->value = std::move(value);
  check_finite(*n);
  bool rg = false;
  if (grad_enabled) {
    for (const auto& p : parents) rg = rg || p->requires_grad;
  }
  n->requires_grad = rg;
  if (rg) n->parents = std::move(parents);
  return Tensor<T>(std::move(n));
}

}  // namespace detail

}  // namespace otsvad
