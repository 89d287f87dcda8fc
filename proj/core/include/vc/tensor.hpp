#pragma once

// Dense double-precision tensors with tape-based reverse-mode autodiff.
//
// Every tensor is rank 3 with layout [batch, channels, time]. Frame-level
// matrices described as [frames x dim] are stored transposed as [1, dim, frames]
// so that convolutions run along the contiguous time axis.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace vc {

struct Shape {
  std::size_t n = 1;
  std::size_t c = 1;
  std::size_t t = 1;

  std::size_t size() const { return n * c * t; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Called with this node once its gradient is complete; pushes into parents.
  std::function<void(Node&)> backward;

  std::vector<double>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  std::span<const double> values() const { return node_->value; }
  std::span<double> mutable_values() { return node_->value; }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() { return node_->grad_buffer(); }
  bool has_grad() const { return node_ && node_->grad.size() == node_->value.size(); }

  double item() const;
  double at(std::size_t n, std::size_t c, std::size_t t) const {
    return node_->value[(n * node_->shape.c + c) * node_->shape.t + t];
  }

  // Seeds d(self)/d(self) = 1 and accumulates into every reachable leaf.
  // Only valid on single-element tensors.
  void backward() const;
  void zero_grad();

  // Copies the values into a fresh leaf that carries no history.
  Tensor detach() const;
  Tensor clone() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

// Graph recording is on by default; the guard turns it off for the current
// thread, which is how evaluation-mode forward passes stay side-effect free.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Builds an op result. `backward` receives the finished result node; it is
// only attached when recording is enabled and some parent requires grad.
Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                   std::function<void(detail::Node&)> backward);

}  // namespace vc
