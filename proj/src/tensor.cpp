#include "ka/tensor.hpp"

#include <sstream>
#include <unordered_set>

#include "ka/error.hpp"

namespace ka {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = std::make_shared<detail::Node>();
  n->value.assign(ka::numel(shape), value);
  n->shape = std::move(shape);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  require(values.size() == ka::numel(shape),
          "Tensor::from: " + std::to_string(values.size()) + " values for shape " + to_string(shape));
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

const Shape& Tensor::shape() const {
  require(defined(), "Tensor: undefined");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  require(axis < shape().size(), "Tensor::dim: axis out of range");
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_ ? node_->value.size() : 0; }

std::span<const double> Tensor::data() const { return node_->value; }
std::span<double> Tensor::mutable_data() const { return node_->value; }
std::span<const double> Tensor::grad() const { return node_->grad; }
std::span<double> Tensor::mutable_grad() const { return node_->grad_buffer(); }

double Tensor::item() const {
  require(numel() == 1, "Tensor::item: not a scalar " + to_string(shape()));
  return node_->value[0];
}

double Tensor::at(std::size_t i, std::size_t j) const {
  require(rank() == 2, "Tensor::at: rank-2 tensor expected");
  return node_->value[i * node_->shape[1] + j];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
void Tensor::set_requires_grad(bool flag) { node_->requires_grad = flag; }

Tensor Tensor::detach() const { return from(shape(), node_->value, false); }

Tensor Tensor::clone() const { return from(shape(), node_->value, node_->requires_grad); }

void Tensor::zero_grad() const {
  if (node_) node_->grad.clear();
}

Tensor Tensor::make_result(Shape shape, std::vector<double> value, const std::vector<Tensor>& parents,
                           detail::BackwardFn backward) {
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  if (g_grad_enabled) {
    for (const auto& p : parents) {
      if (p.requires_grad()) n->requires_grad = true;
    }
    if (n->requires_grad) {
      n->parents.reserve(parents.size());
      for (const auto& p : parents) n->parents.push_back(p.node_);
      n->backward = std::move(backward);
    }
  }
  return Tensor(std::move(n));
}

void Tensor::backward() const {
  require(numel() == 1, "Tensor::backward: root must be scalar");
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents before children).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::Node* p = n->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(n->grad);
  }
  // Intermediate gradients are not needed once propagated.
  for (detail::Node* n : order) {
    if (n->backward) n->grad.clear();
  }
}

}  // namespace ka
