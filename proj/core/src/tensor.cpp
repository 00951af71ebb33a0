#include "fetrack/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

namespace fetrack {

std::string shape_str(const Shape& s) {
  std::ostringstream out;
  out << "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out << ",";
    out << s[i];
  }
  out << ")";
  return out.str();
}

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (std::int64_t d : s) n *= d;
  return n;
}

namespace {
thread_local bool g_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
EnableGradGuard::EnableGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = true; }
EnableGradGuard::~EnableGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto node = std::make_shared<detail::TensorNode>();
  const std::int64_t n = shape_numel(shape);
  if (n < 0) throw ShapeError("negative extent in shape " + shape_str(shape));
  node->shape = std::move(shape);
  node->value.assign(static_cast<std::size_t>(n), value);
  node->requires_grad = requires_grad;
  if (requires_grad) node->ensure_grad();
  return Tensor(std::move(node));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_str(shape));
  }
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->value = std::move(data);
  node->requires_grad = requires_grad;
  if (requires_grad) node->ensure_grad();
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

double Tensor::item() const {
  if (!node_ || node_->value.size() != 1) {
    throw ShapeError("item() requires a single-element tensor");
  }
  return node_->value[0];
}

std::span<double> Tensor::grad() {
  if (!requires_grad()) throw StateError("tensor does not track gradients");
  node_->ensure_grad();
  return node_->grad;
}

std::span<const double> Tensor::grad() const {
  if (!requires_grad()) throw StateError("tensor does not track gradients");
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_ && node_->requires_grad) node_->grad.assign(node_->value.size(), 0.0);
}

Tensor Tensor::clone_detached(bool requires_grad) const {
  return from_data(node_->shape, node_->value, requires_grad);
}

void Tensor::backward() const {
  if (!node_) throw StateError("backward on undefined tensor");
  if (node_->value.size() != 1) throw ShapeError("backward requires a scalar output");
  if (node_->backward_done) {
    throw StateError("graph already consumed; run forward again before backward");
  }

  // Post-order topological sort over grad-requiring nodes.
  std::vector<detail::TensorNode*> order;
  std::unordered_set<detail::TensorNode*> seen;
  std::vector<std::pair<detail::TensorNode*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      detail::TensorNode* p = n->parents[next].get();
      ++next;
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  node_->ensure_grad();
  node_->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorNode* n = *it;
    if (n->backprop) n->backprop(*n);
  }
  node_->backward_done = true;
}

}  // namespace fetrack
