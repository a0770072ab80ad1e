// SPDX-License-Identifier: Apache-2.0
#include "avssl/nn/autograd.hpp"

#include <unordered_set>
#include <utility>

namespace avssl::nn {

template <typename T>
void backward(const Var<T>& root, BackwardOptions options) {
  if (root->value.size() != 1) {
    throw ShapeError("backward() needs a scalar root, got " + shape_string(root->value.shape()));
  }
  if (!root->requires_grad) return;

  // Iterative post-order DFS; reversing it gives a valid reverse-mode order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->is_leaf() || !node->has_grad()) continue;
    node->backward_fn(*node);
    if (options.release_interior && node != root.get()) {
      node->clear_grad();
      node->value = Tensor<T>();
    }
  }
}

template void backward<float>(const Var<float>&, BackwardOptions);
template void backward<double>(const Var<double>&, BackwardOptions);

}  // namespace avssl::nn
