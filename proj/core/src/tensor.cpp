#include "ddb/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace ddb {

int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor dims must be positive");
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto node = std::make_shared<detail::TensorNode>();
  node->data.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (double& v : t.node_->data) v = value;
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data,
                         bool requires_grad) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
    throw std::invalid_argument("from_data: shape " + shape_str(shape) +
                                " does not match data length " +
                                std::to_string(data.size()));
  }
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return node_->shape; }

int64_t Tensor::numel() const { return static_cast<int64_t>(node_->data.size()); }

int Tensor::dim(int axis) const {
  if (axis < 0 || axis >= static_cast<int>(node_->shape.size())) {
    throw std::invalid_argument("dim: axis out of range");
  }
  return node_->shape[axis];
}

double* Tensor::data() { return node_->data.data(); }
const double* Tensor::data() const { return node_->data.data(); }

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool value) { node_->requires_grad = value; }

std::vector<double>& Tensor::grad() { return node_->grad_buffer(); }

bool Tensor::has_grad_storage() const {
  return node_ && !node_->grad.empty();
}

void Tensor::zero_grad() {
  if (!node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
}

double Tensor::value() const {
  if (numel() != 1) {
    throw std::invalid_argument("value: tensor is not scalar, shape " +
                                shape_str(node_->shape));
  }
  return node_->data[0];
}

double Tensor::at(std::initializer_list<int> index) const {
  if (index.size() != node_->shape.size()) {
    throw std::invalid_argument("at: index rank mismatch");
  }
  int64_t flat = 0;
  int axis = 0;
  for (int i : index) {
    if (i < 0 || i >= node_->shape[axis]) {
      throw std::invalid_argument("at: index out of range");
    }
    flat = flat * node_->shape[axis] + i;
    ++axis;
  }
  return node_->data[static_cast<size_t>(flat)];
}

Tensor Tensor::detach() const {
  auto node = std::make_shared<detail::TensorNode>();
  node->shape = node_->shape;
  node->data = node_->data;
  return Tensor(std::move(node));
}

Tensor Tensor::clone() const { return detach(); }

void Tensor::check_finite(const char* context) const {
  for (double v : node_->data) {
    if (!std::isfinite(v)) {
      throw std::runtime_error(std::string(context) +
                               ": tensor contains a non-finite value");
    }
  }
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar tensor");
  }
  auto root = loss.node();

  // Iterative post-order DFS; topo holds children after all their parents'
  // dependents, so reverse iteration visits each node before its parents.
  std::vector<detail::TensorNode*> topo;
  std::unordered_set<detail::TensorNode*> visited;
  std::vector<std::pair<detail::TensorNode*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::TensorNode* parent = node->parents[next].get();
      ++next;
      if (visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }

  for (detail::TensorNode* node : topo) {
    if (node->requires_grad) node->grad.assign(node->data.size(), 0.0);
  }
  root->grad_buffer()[0] = 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    detail::TensorNode* node = *it;
    if (node->backprop && !node->grad.empty()) node->backprop(*node);
  }
}

}  // namespace ddb
