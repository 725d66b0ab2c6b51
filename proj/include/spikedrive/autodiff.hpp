#pragma once

#include <functional>
#include <memory>
#include <unordered_map>
#include <utility>
#include <vector>

#include "spikedrive/tensor.hpp"

namespace spikedrive {

// Reverse-mode tape. Each op returns a Value (shared node). Nodes cache the
// forward tensor plus whatever their backward rule needs; backward() walks the
// graph in reverse topological order and accumulates gradients into leaves.
//
// Graphs are built per forward pass and dropped afterwards; parameters are
// long-lived leaf nodes owned by the model.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated lazily during backward
  bool requires_grad = false;
  bool is_param = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  bool has_grad() const { return !grad.empty(); }
  // Gradient buffer for accumulation, zero-initialised on first touch.
  Tensor<T>& grad_buf() {
    if (grad.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }
  void zero_grad() {
    if (!grad.empty()) grad.fill(T(0));
  }
};

template <typename T>
using Value = std::shared_ptr<Node<T>>;

template <typename T>
Value<T> constant(Tensor<T> v) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(v);
  return n;
}

template <typename T>
Value<T> parameter(Tensor<T> v) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(v);
  n->requires_grad = true;
  n->is_param = true;
  return n;
}

// Attach a result node. When no parent needs gradients the node is emitted as
// a plain constant so inference graphs never retain their inputs.
template <typename T>
Value<T> make_node(Tensor<T> v, std::vector<Value<T>> parents,
                   std::function<void(Node<T>&)> backward_fn) {
  bool needs = false;
  for (const auto& p : parents) needs = needs || p->requires_grad;
  if (!needs) return constant(std::move(v));
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(v);
  n->requires_grad = true;
  n->parents = std::move(parents);
  n->backward_fn = std::move(backward_fn);
  return n;
}

// Reverse topological order from root following parent edges. Throws on a
// cycle (malformed graph).
template <typename T>
std::vector<Node<T>*> topo_order(Node<T>* root) {
  std::vector<Node<T>*> post;
  std::unordered_map<Node<T>*, int> state;  // 1 = open, 2 = done
  std::vector<std::pair<Node<T>*, size_t>> stack;
  stack.push_back({root, 0});
  state[root] = 1;
  while (!stack.empty()) {
    auto& top = stack.back();
    Node<T>* n = top.first;
    if (top.second < n->parents.size()) {
      Node<T>* p = n->parents[top.second++].get();
      if (!p->requires_grad) continue;
      auto it = state.find(p);
      if (it == state.end()) {
        state[p] = 1;
        stack.push_back({p, 0});
      } else if (it->second == 1) {
        throw ContractError("autodiff graph contains a cycle");
      }
    } else {
      state[n] = 2;
      post.push_back(n);
      stack.pop_back();
    }
  }
  return post;  // root is last; iterate in reverse for backward
}

// Seed the root gradient and propagate. Non-leaf gradients are freed as soon
// as they have been consumed to keep the peak footprint near the forward tape.
template <typename T>
void backward(const Value<T>& root, Tensor<T> seed) {
  contract(root != nullptr, "backward on null value");
  contract(seed.same_shape(root->value), "backward seed shape mismatch");
  if (!root->requires_grad) return;
  auto order = topo_order(root.get());
  root->grad = std::move(seed);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (!n->has_grad()) continue;  // unreached by any gradient path
    if (n->backward_fn) n->backward_fn(*n);
    if (!n->is_param) n->grad.release();
  }
}

// Scalar convenience: seed with 1.
template <typename T>
void backward(const Value<T>& root) {
  contract(root->value.size() == 1, "default backward seed needs a scalar root");
  backward(root, Tensor<T>::scalar(T(1)));
}

}  // namespace spikedrive
