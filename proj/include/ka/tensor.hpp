#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ka {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

struct Node;
using NodePtr = std::shared_ptr<Node>;

// Receives the gradient flowing into the node's output and pushes it into the
// parents' grad buffers.
using BackwardFn = std::function<void(std::span<const double> out_grad)>;

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  BackwardFn backward;

  std::vector<double>& grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

// Dense row-major double tensor with reverse-mode autodiff.
//
// Tensor is a shared handle: copies alias the same storage. Leaves created with
// requires_grad accumulate gradients across backward() calls until zero_grad().
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data() const;  // handle semantics: const refers to the handle
  // Empty span when no gradient has been accumulated.
  std::span<const double> grad() const;
  std::span<double> mutable_grad() const;

  double item() const;
  double at(std::size_t i, std::size_t j) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);

  // New leaf holding a copy of the value; cuts the graph.
  Tensor detach() const;
  // Deep copy of value (and requires_grad flag) as a fresh leaf.
  Tensor clone() const;

  // Seeds d(this)/d(this) = 1; this must be a scalar.
  void backward() const;
  void zero_grad() const;

  detail::Node* node() const { return node_.get(); }
  const detail::NodePtr& node_ptr() const { return node_; }

  // Build an op result. When grad mode is off or no parent requires grad the
  // backward closure is dropped.
  static Tensor make_result(Shape shape, std::vector<double> value, const std::vector<Tensor>& parents,
                            detail::BackwardFn backward);

 private:
  explicit Tensor(detail::NodePtr n) : node_(std::move(n)) {}
  detail::NodePtr node_;
};

// Scoped switch that disables graph recording (evaluation).
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

}  // namespace ka
