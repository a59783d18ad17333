// SPDX-License-Identifier: Apache-2.0
//
// Dense NCHW f32 tensors with tape-free reverse-mode differentiation.
//
// Every op returns a Var whose Node keeps the op's inputs alive and a closure
// that, given the node's gradient, accumulates into the inputs' gradients.
// backward() walks the graph in reverse topological order from a scalar.
#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace wetseg::nn {

struct Shape {
  int n = 1, c = 1, h = 1, w = 1;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Value-semantic dense buffer.
struct Tensor {
  Shape shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(Shape s, float fill = 0.0f) : shape(s), data(s.numel(), fill) {}
  Tensor(Shape s, std::vector<float> values);

  std::size_t numel() const { return data.size(); }
  float& at(int n, int c, int h, int w) {
    return data[((static_cast<std::size_t>(n) * shape.c + c) * shape.h + h) * shape.w + w];
  }
  float at(int n, int c, int h, int w) const {
    return data[((static_cast<std::size_t>(n) * shape.c + c) * shape.h + h) * shape.w + w];
  }
  /// One image (batch index n) as a C x H x W span.
  std::span<const float> image(int n) const {
    const std::size_t sz = static_cast<std::size_t>(shape.c) * shape.plane();
    return {data.data() + n * sz, sz};
  }
  bool all_finite() const;
};

struct Node {
  Tensor value;
  Tensor grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
  const char* op = "leaf";

  /// Zero-initialized gradient buffer matching `value`.
  Tensor& grad_buffer();
};

class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape; }
  bool requires_grad() const { return node_->requires_grad; }
  /// Gradient after backward(); zeros if nothing flowed here.
  const Tensor& grad() const { return node_->grad_buffer(); }
  Node& node() const { return *node_; }
  const std::shared_ptr<Node>& ptr() const { return node_; }

  /// Scalar value of a one-element tensor.
  float item() const;

 private:
  std::shared_ptr<Node> node_;
};

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Builds an op result. `backward` is dropped (and inputs released) when no
/// input requires a gradient or recording is disabled. Throws NumericError if
/// `value` holds NaN or Inf.
Var make_op(const char* op, Tensor value, std::vector<Var> inputs,
            std::function<void(Node&)> backward);

/// Reverse pass from a finite one-element tensor; gradients accumulate.
void backward(const Var& loss);

}  // namespace wetseg::nn
