// SPDX-License-Identifier: Apache-2.0
//
// Minimal tape-free reverse-mode differentiation over Tensor values.
// Every op returns a Node that keeps shared ownership of its inputs; calling
// backward() on a scalar root walks the graph in reverse topological order.
#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "avssl/core/tensor.hpp"

namespace avssl::nn {

template <typename T>
class Node {
 public:
  Tensor<T> value;
  bool requires_grad = false;
  std::string name;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
  bool has_grad() const { return !grad_.empty(); }

  /// Gradient buffer, allocated as zeros on first use.
  Tensor<T>& grad() {
    if (grad_.shape() != value.shape() || grad_.size() != value.size()) {
      grad_ = Tensor<T>(value.shape());
    }
    return grad_;
  }
  const Tensor<T>& grad_or_empty() const { return grad_; }
  void clear_grad() { grad_ = Tensor<T>(); }

 private:
  Tensor<T> grad_;
};

template <typename T>
using Var = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> make_leaf(Tensor<T> value, bool requires_grad, std::string name = {}) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  n->name = std::move(name);
  return n;
}

template <typename T>
Var<T> constant(Tensor<T> value) {
  return make_leaf(std::move(value), false);
}

/// Stop-gradient: same value, no path back to the source.
template <typename T>
Var<T> detach(const Var<T>& x) {
  return make_leaf(x->value, false, x->name);
}

/// Builds an interior node. The backward function is dropped when no input
/// requires a gradient, so inference graphs hold no closures.
template <typename T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents,
               std::function<void(Node<T>&)> backward_fn) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  for (const auto& p : parents) n->requires_grad = n->requires_grad || p->requires_grad;
  if (n->requires_grad) {
    n->parents = std::move(parents);
    n->backward_fn = std::move(backward_fn);
  }
  return n;
}

struct BackwardOptions {
  /// Drop gradients and values of interior nodes once they have been
  /// propagated. Leaves always keep their gradients.
  bool release_interior = true;
};

/// Seeds d(root)/d(root) = 1 and accumulates into every reachable leaf that
/// requires a gradient. root must hold exactly one element.
template <typename T>
void backward(const Var<T>& root, BackwardOptions options = {});

extern template void backward<float>(const Var<float>&, BackwardOptions);
extern template void backward<double>(const Var<double>&, BackwardOptions);

}  // namespace avssl::nn
