#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

namespace ddb {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // sized lazily; empty means all-zero
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  // Reads this->grad and accumulates into the parents' grads.
  std::function<void(TensorNode&)> backprop;

  std::vector<double>& grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

// Dense row-major f64 tensor with reverse-mode differentiation. Tensor is a
// cheap handle; copies alias the same storage and graph node. Ops record the
// graph only when an input requires gradients, so teacher-side computations
// carry no tape at all.
class Tensor {
public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int64_t numel() const;
  int dim(int axis) const;

  double* data();
  const double* data() const;
  std::vector<double>& raw() { return node_->data; }
  const std::vector<double>& raw() const { return node_->data; }

  bool requires_grad() const;
  void set_requires_grad(bool value);
  // Gradient buffer, allocated (zero) on first access.
  std::vector<double>& grad();
  bool has_grad_storage() const;
  void zero_grad();

  // Scalar value of a 1-element tensor.
  double value() const;
  double at(std::initializer_list<int> index) const;

  // Same values, no graph, no gradient requirement.
  Tensor detach() const;
  // Deep copy of the values (fresh storage, no graph).
  Tensor clone() const;

  // Throws if any entry is not finite.
  void check_finite(const char* context) const;

  std::shared_ptr<detail::TensorNode> node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::TensorNode> node)
      : node_(std::move(node)) {}

private:
  std::shared_ptr<detail::TensorNode> node_;
};

// Populates grad for every tensor reachable from `loss` that requires
// gradients. Grads of reachable tensors are overwritten, not accumulated
// across calls. `loss` must be scalar.
void backward(const Tensor& loss);

}  // namespace ddb
