#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "rccm/tensor.hpp"

namespace rccm::nn {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One vertex of the dynamic compute DAG. Graphs are rebuilt per step; leaves
// (parameters, inputs) persist across steps. backward_fn reads this node's
// grad and accumulates into the parents' grads.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_fn;
  const char* op = "leaf";

  bool has_grad() const { return grad.numel() == value.numel() && grad.numel() > 0; }

  // Lazily allocates a zeroed grad buffer matching the value.
  Tensor& grad_buf() {
    if (!has_grad()) grad = Tensor(value.shape());
    return grad;
  }

  void zero_grad() {
    if (has_grad()) grad.zero();
  }
};

NodePtr make_leaf(Tensor value, bool requires_grad = false);

NodePtr make_node(Tensor value, std::vector<NodePtr> parents,
                  std::function<void(Node&)> backward_fn, const char* op);

// Reverse-mode sweep from a scalar root: seeds d(root)/d(root) = 1 and calls
// each reachable node's backward_fn in reverse topological order. Parameter
// grads accumulate; callers zero them between steps.
void backward(const NodePtr& root);

}  // namespace rccm::nn
