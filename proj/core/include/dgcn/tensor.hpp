#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation.
//
// A Tensor is a shared handle to a graph node. Ops produce new nodes that
// remember their inputs and a backward closure when any input requires a
// gradient and grad recording is enabled (see NoGradGuard).

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "dgcn/errors.hpp"

namespace dgcn {

enum class DType { f32, f64 };

std::string to_string(DType dtype);
DType dtype_from_string(const std::string& s);

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a backward pass reaches this node
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<Node>> inputs;
  const char* op = nullptr;  // producing op for recorded nodes, null for leaves
  // Reads this node's grad and accumulates into the grads of `inputs`.
  std::function<void(Node&)> backward;

  // Grad buffer of this node, zero-initialized on first use.
  std::span<T> grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// Whether ops currently record a backward graph. Thread-local.
bool grad_enabled();

/// Disables graph recording for its lifetime (eval-mode forwards, optimizer steps).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename T>
class Tensor {
 public:
  using Scalar = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);
  static Tensor eye(std::size_t n);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t numel() const { return data().size(); }
  static constexpr DType dtype() { return dtype_of<T>(); }

  std::span<const T> data() const;
  /// In-place access for leaves (parameter updates, running statistics).
  std::span<T> mutable_data();
  T item() const;
  T at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool is_leaf() const;

  bool has_grad() const;
  /// Gradient buffer; all zeros if no backward pass has reached this tensor.
  std::vector<T> grad() const;
  Tensor grad_tensor() const;
  void zero_grad();

  /// Copy of the values with no graph history.
  Tensor detach() const;
  /// Deep copy, preserving the requires-grad flag but not the history.
  Tensor clone() const;

  /// Reverse-mode sweep from this scalar. Leaf grads accumulate across calls.
  void backward() const;

  const NodePtr& node() const { return node_; }
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

 private:
  const detail::Node<T>& checked() const;
  NodePtr node_;
};

using Tensor32 = Tensor<float>;
using Tensor64 = Tensor<double>;

template <typename T>
void backward(const Tensor<T>& loss) {
  loss.backward();
}

/// Throws NumericError naming `where` if any value is NaN or Inf.
template <typename T>
void check_finite(std::span<const T> values, const char* where);

namespace detail {

/// Builds an op result. Records `backward` only if grad mode is on and some input requires grad.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, std::initializer_list<Tensor<T>> inputs,
                      std::function<void(Node<T>&)> backward, const char* op_name);

/// When set, backward() seeds the sweep with a slightly wrong upstream gradient.
/// Negative control for gradient checking only.
void set_corrupt_backward(bool on);
bool corrupt_backward();

}  // namespace detail

}  // namespace dgcn
