#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

namespace relmod {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until requested
  bool requires_grad = false;
};
}  // namespace detail

/// Dense row-major float64 tensor with an optional gradient buffer.
/// Copying a Tensor copies the handle, not the storage; ops record
/// backward rules on a Tape against these shared nodes.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t numel() const;
  std::size_t rank() const;

  bool requires_grad() const;
  void set_requires_grad(bool v);

  std::vector<double>& data();
  const std::vector<double>& data() const;

  /// Gradient buffer; allocated (zero-filled) on first access.
  std::vector<double>& grad();
  bool has_grad() const;
  void zero_grad();

  /// Value of a one-element tensor.
  double value() const;

  double& at(std::initializer_list<std::size_t> idx);
  double at(std::initializer_list<std::size_t> idx) const;

  /// True when both handles refer to the same storage.
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  /// Deep copy of the values; no grad, no graph history.
  Tensor detach_copy() const;

 private:
  std::shared_ptr<detail::TensorNode> node_;
  detail::TensorNode& node();
  const detail::TensorNode& node() const;
};

}  // namespace relmod
