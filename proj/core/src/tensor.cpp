#include "dgcn/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace dgcn {

std::string to_string(DType dtype) { return dtype == DType::f32 ? "f32" : "f64"; }

DType dtype_from_string(const std::string& s) {
  if (s == "f32") return DType::f32;
  if (s == "f64") return DType::f64;
  throw FormatError("unknown dtype '" + s + "'");
}

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {
thread_local bool g_grad_enabled = true;
bool g_corrupt_backward = false;

void validate_shape(const Shape& shape) {
  for (auto extent : shape) {
    if (extent == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(shape));
  }
}
}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace detail {
void set_corrupt_backward(bool on) { g_corrupt_backward = on; }
bool corrupt_backward() { return g_corrupt_backward; }
}  // namespace detail

template <typename T>
void check_finite(std::span<const T> values, const char* where) {
  // Exponent bits all set means inf or NaN. The integer scan vectorizes; the search runs only on failure.
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  constexpr Bits exponent = sizeof(T) == 4 ? Bits(0x7f800000u) : Bits(0x7ff0000000000000ull);
  bool bad = false;
  for (T v : values) bad |= (std::bit_cast<Bits>(v) & exponent) == exponent;
  if (!bad) return;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError(std::string("non-finite value produced by ") + where + " at flat index " +
                         std::to_string(i));
    }
  }
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  validate_shape(shape);
  auto node = std::make_shared<detail::Node<T>>();
  node->data.assign(dgcn::numel(shape), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  validate_shape(shape);
  if (dgcn::numel(shape) != values.size()) {
    throw ShapeError("shape " + shape_string(shape) + " holds " + std::to_string(dgcn::numel(shape)) +
                     " elements, got " + std::to_string(values.size()));
  }
  check_finite<T>(values, "Tensor::from");
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::eye(std::size_t n) {
  auto t = zeros({n, n});
  auto d = t.mutable_data();
  for (std::size_t i = 0; i < n; ++i) d[i * n + i] = T(1);
  return t;
}

template <typename T>
const detail::Node<T>& Tensor<T>::checked() const {
  if (!node_) throw std::logic_error("use of an undefined tensor");
  return *node_;
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  return checked().shape;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_string(s));
  return s[axis];
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
  return checked().data;
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  checked();
  return node_->data;
}

template <typename T>
T Tensor<T>::item() const {
  const auto& n = checked();
  if (n.data.size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(n.shape));
  return n.data[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
  const auto& n = checked();
  if (index.size() != n.shape.size()) throw ShapeError("index rank does not match " + shape_string(n.shape));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= n.shape[axis]) throw ShapeError("index out of range for " + shape_string(n.shape));
    flat = flat * n.shape[axis] + i;
    ++axis;
  }
  return n.data[flat];
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  return checked().requires_grad;
}

template <typename T>
void Tensor<T>::set_requires_grad(bool on) {
  checked();
  if (!node_->is_leaf) throw std::logic_error("requires_grad can only be set on leaf tensors");
  node_->requires_grad = on;
}

template <typename T>
bool Tensor<T>::is_leaf() const {
  return checked().is_leaf;
}

template <typename T>
bool Tensor<T>::has_grad() const {
  return !checked().grad.empty();
}

template <typename T>
std::vector<T> Tensor<T>::grad() const {
  const auto& n = checked();
  if (n.grad.empty()) return std::vector<T>(n.data.size(), T(0));
  return n.grad;
}

template <typename T>
Tensor<T> Tensor<T>::grad_tensor() const {
  return from(shape(), grad());
}

template <typename T>
void Tensor<T>::zero_grad() {
  checked();
  node_->grad.clear();
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  const auto& n = checked();
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = n.shape;
  node->data = n.data;
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  auto t = detach();
  t.node_->requires_grad = checked().requires_grad;
  return t;
}

template <typename T>
void Tensor<T>::backward() const {
  const auto& root = checked();
  if (root.data.size() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " + shape_string(root.shape));
  }
  if (!root.requires_grad) return;

  // Post-order DFS gives a topological order with inputs before consumers.
  std::vector<detail::Node<T>*> order;
  std::unordered_set<detail::Node<T>*> seen;
  std::vector<std::pair<detail::Node<T>*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      auto* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (auto* node : order) {
    if (!node->is_leaf) node->grad.assign(node->data.size(), T(0));
  }
  node_->grad_buffer()[0] += detail::corrupt_backward() ? T(1.01) : T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    auto* node = *it;
    if (!node->is_leaf && node->backward) node->backward(*node);
  }
}

namespace detail {

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, std::initializer_list<Tensor<T>> inputs,
                      std::function<void(Node<T>&)> backward, const char* op_name) {
  check_finite<T>(data, op_name);
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool needs_grad = false;
  if (grad_enabled()) {
    for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
  }
  if (needs_grad) {
    node->requires_grad = true;
    node->is_leaf = false;
    node->op = op_name;
    for (const auto& in : inputs) node->inputs.push_back(in.node());
    node->backward = std::move(backward);
  }
  return Tensor<T>(std::move(node));
}

template Tensor<float> make_result(Shape, std::vector<float>, std::initializer_list<Tensor<float>>,
                                   std::function<void(Node<float>&)>, const char*);
template Tensor<double> make_result(Shape, std::vector<double>, std::initializer_list<Tensor<double>>,
                                    std::function<void(Node<double>&)>, const char*);

}  // namespace detail

template void check_finite<float>(std::span<const float>, const char*);
template void check_finite<double>(std::span<const double>, const char*);
template class Tensor<float>;
template class Tensor<double>;

}  // namespace dgcn
