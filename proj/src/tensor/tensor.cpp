// SPDX-License-Identifier: Apache-2.0
#include "wetseg/tensor/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>
#include <utility>

#include "wetseg/error.hpp"

namespace wetseg::nn {

namespace {
thread_local bool g_grad_enabled = true;
}

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + ")";
}

Tensor::Tensor(Shape s, std::vector<float> values) : shape(s), data(std::move(values)) {
  if (data.size() != shape.numel())
    throw DataError("tensor of shape " + shape.str() + " given " + std::to_string(data.size()) +
                    " values");
}

bool Tensor::all_finite() const {
  return std::all_of(data.begin(), data.end(), [](float v) { return std::isfinite(v); });
}

Tensor& Node::grad_buffer() {
  if (grad.shape != value.shape || grad.data.size() != value.data.size())
    grad = Tensor(value.shape, 0.0f);
  return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

float Var::item() const {
  if (value().numel() != 1)
    throw DataError("item() on tensor of shape " + value().shape.str());
  return value().data[0];
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Var make_op(const char* op, Tensor value, std::vector<Var> inputs,
            std::function<void(Node&)> backward_fn) {
  if (!value.all_finite())
    throw NumericError(std::string("non-finite value in output of ") + op);
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  const bool needs = g_grad_enabled && std::any_of(inputs.begin(), inputs.end(), [](const Var& v) {
                       return v.defined() && v.requires_grad();
                     });
  if (needs) {
    node->requires_grad = true;
    node->backward = std::move(backward_fn);
    for (auto& v : inputs) node->inputs.push_back(v.defined() ? v.ptr() : nullptr);
  }
  return Var(std::move(node));
}

void backward(const Var& loss) {
  if (!loss.defined() || loss.value().numel() != 1)
    throw DataError("backward() needs a one-element loss");
  if (!std::isfinite(loss.value().data[0])) throw NumericError("non-finite loss");
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{&loss.node(), 0}};
  visited.insert(&loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child && child->requires_grad && visited.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node().grad_buffer().data[0] += 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward) n->backward(*n);
  }
}

}  // namespace wetseg::nn
