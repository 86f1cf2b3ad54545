#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace clst {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Raised by any op whose operands do not conform.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(const std::string& op, const Shape& a, const Shape& b);
  ShapeError(const std::string& op, const std::string& what);
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty when absent
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad and accumulates into parents' grads.
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.empty()) grad.assign(values.size(), 0.0);
  }
};

}  // namespace detail

/// Dense row-major tensor of 64-bit reals with an optional gradient slot.
///
/// Tensor is a cheap handle: copies share storage. Ops applied to tensors
/// that require grad record a node on an implicit tape; `backward()` on a
/// scalar result walks that tape once and then releases it.
class Tensor {
 public:
  Tensor();

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->values.size(); }

  std::span<const double> values() const { return node_->values; }
  std::span<double> mutable_values() { return node_->values; }
  double item() const;
  double operator[](std::size_t i) const { return node_->values[i]; }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on);

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad();
  void zero_grad() { node_->grad.clear(); }

  /// Reverse-mode sweep from this scalar. Gradients accumulate into every
  /// reachable leaf that requires grad; interior nodes are released.
  void backward();

  /// Same values, no history, no grad requirement.
  Tensor detach() const;

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

  // Used by op implementations.
  static Tensor make_result(Shape shape, std::vector<double> values,
                            std::vector<Tensor> inputs,
                            std::function<void(detail::Node&)> backward_fn);
  detail::Node& node() const { return *node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator*(double s, const Tensor& a);

/// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
/// [m,n] -> [n,m]
Tensor transpose(const Tensor& a);

/// Same-size 2-D convolution on an [H,W,Cin] map with a [k,k,Cin,Cout]
/// kernel (k odd, stride 1, zero padding k/2) and a [Cout] bias.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias);

Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
/// log(max(x, kLogFloor)); the gradient is zero below the floor.
Tensor log(const Tensor& a);
inline constexpr double kLogFloor = 1e-12;

/// Softmax over the last axis.
Tensor softmax(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Reduce one axis away.
Tensor sum(const Tensor& a, std::size_t axis);
Tensor mean(const Tensor& a, std::size_t axis);

/// Euclidean norm over the last axis: [..., K] -> [...]
Tensor l2_norm(const Tensor& a);
/// [..., K] / [...] broadcast along the last axis.
Tensor divide_rows(const Tensor& a, const Tensor& denom);
/// Row-wise unit vectors over the last axis. Throws on a zero-norm row.
Tensor l2_normalize(const Tensor& a);

/// Inner product of two equally shaped tensors -> scalar.
Tensor dot(const Tensor& a, const Tensor& b);

/// Same values, new shape with equal element count.
Tensor reshape(const Tensor& a, Shape shape);

/// Largest |analytic - central difference| / max(1, |analytic|) over every
/// coordinate of `x`. `f` must be deterministic and return a scalar.
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                         Tensor x, double step);

}  // namespace clst
