#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace dir {

using Shape = std::vector<int>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Thrown when operand dimensions do not conform to a primitive's contract.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a NaN/Inf enters a primitive or a loss diverges.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Thrown when an operation is not defined for the given object
/// (e.g. inverting a forward-only transform).
struct UnsupportedOperation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

// One node of the define-by-run graph. Leaves have no backward_fn.
struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated lazily, same length as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<double>& ensure_grad();
};

}  // namespace detail

/// Dense n-dimensional array of doubles, row-major, with a reverse-mode
/// gradient tape built implicitly through the free-function primitives below.
/// Copies are shallow; a Tensor is a handle to a graph node.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t size() const { return static_cast<std::int64_t>(node_->value.size()); }
  const std::vector<double>& value() const { return node_->value; }
  /// In-place access for optimizer updates on leaf parameters.
  std::vector<double>& mutable_value() { return node_->value; }
  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<double>& grad() const;
  void zero_grad();
  double item() const;

  std::shared_ptr<detail::Node> node() const { return node_; }
  static Tensor from_node(std::shared_ptr<detail::Node> n);

 private:
  std::shared_ptr<detail::Node> node_;
};

// ---- primitives -----------------------------------------------------------
// Each records itself on the implicit tape when any input requires grad.

Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n] -> [m,n]
// add: identical shapes, or [m,n] + [n] (row broadcast),
// or [N,F,H,W] + [F] (per-channel bias).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise, identical shapes
Tensor scale(const Tensor& a, double c);
Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
// conv2d: x [N,C,H,W], kernel [F,C,3,3], stride 1, zero padding 1.
Tensor conv2d(const Tensor& x, const Tensor& kernel);
Tensor maxpool2x2(const Tensor& x);  // H, W even
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat_cols(const std::vector<Tensor>& parts);  // [m,n_i] -> [m, sum n_i]
Tensor mean(const Tensor& x);       // -> scalar
Tensor sum(const Tensor& x);        // -> scalar
Tensor l1_norm(const Tensor& x);    // sum |x_i| -> scalar
Tensor sq_l2_norm(const Tensor& x); // sum x_i^2 -> scalar
// Mean cross-entropy of softmax(logits [n, classes]) against integer labels.
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);
// Mean binary cross-entropy with logits; targets in [0,1], same shape.
Tensor sigmoid_bce(const Tensor& logits, const Tensor& targets);

/// Reverse pass from a scalar loss. Visits recorded operations in reverse
/// topological order exactly once; gradients accumulate additively.
void backward(const Tensor& loss);

}  // namespace dir
