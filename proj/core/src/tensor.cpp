#include "relmod/tensor.hpp"

#include <numeric>
#include <sstream>

#include "relmod/errors.hpp"

namespace relmod {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return from_values(shape, std::vector<double>(shape_numel(shape), 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  return from_values(shape, std::vector<double>(shape_numel(shape), value), requires_grad);
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
  for (std::size_t e : shape) {
    if (e == 0) throw ShapeError("tensor: zero extent in shape " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " +
                     std::to_string(values.size()) + " values");
  }
  Tensor t;
  t.node_ = std::make_shared<detail::TensorNode>();
  t.node_->shape = std::move(shape);
  t.node_->data = std::move(values);
  t.node_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_values({1}, {value}, requires_grad);
}

detail::TensorNode& Tensor::node() {
  if (!node_) throw Error("tensor: use of undefined tensor");
  return *node_;
}

const detail::TensorNode& Tensor::node() const {
  if (!node_) throw Error("tensor: use of undefined tensor");
  return *node_;
}

const Shape& Tensor::shape() const { return node().shape; }
std::size_t Tensor::numel() const { return node().data.size(); }
std::size_t Tensor::rank() const { return node().shape.size(); }

bool Tensor::requires_grad() const { return node().requires_grad; }
void Tensor::set_requires_grad(bool v) { node().requires_grad = v; }

std::vector<double>& Tensor::data() { return node().data; }
const std::vector<double>& Tensor::data() const { return node().data; }

std::vector<double>& Tensor::grad() {
  auto& n = node();
  if (n.grad.size() != n.data.size()) n.grad.assign(n.data.size(), 0.0);
  return n.grad;
}

bool Tensor::has_grad() const { return node().grad.size() == node().data.size(); }

void Tensor::zero_grad() {
  auto& n = node();
  n.grad.assign(n.data.size(), 0.0);
}

double Tensor::value() const {
  const auto& n = node();
  if (n.data.size() != 1) {
    throw ShapeError("tensor: value() on non-scalar of shape " + shape_str(n.shape));
  }
  return n.data[0];
}

double& Tensor::at(std::initializer_list<std::size_t> idx) {
  auto& n = node();
  if (idx.size() != n.shape.size()) {
    throw ShapeError("tensor: index rank mismatch for shape " + shape_str(n.shape));
  }
  std::size_t flat = 0;
  std::size_t d = 0;
  for (std::size_t i : idx) {
    if (i >= n.shape[d]) throw ShapeError("tensor: index out of range");
    flat = flat * n.shape[d] + i;
    ++d;
  }
  return n.data[flat];
}

double Tensor::at(std::initializer_list<std::size_t> idx) const {
  return const_cast<Tensor*>(this)->at(idx);
}

Tensor Tensor::detach_copy() const {
  const auto& n = node();
  return Tensor::from_values(n.shape, n.data, false);
}

}  // namespace relmod
