#pragma once

#include <functional>

#include "dgcn/rng.hpp"
#include "dgcn/tensor.hpp"

namespace dgcn {

/// c[i,j] = sum_k a[i,k] b[k,j] for 2-D operands.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> transpose(const Tensor<T>& a);

/// Row-major relayout; element count must be preserved.
template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);

// Elementwise ops never broadcast: operand shapes must be identical.
template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);
/// max(x, 0); the subgradient at 0 is 0.
template <typename T>
Tensor<T> relu(const Tensor<T>& a);

/// Sum of all elements as a 0-d tensor.
template <typename T>
Tensor<T> sum(const Tensor<T>& a);

/// Central differences (f(x + eps e_i) - f(x - eps e_i)) / 2 eps for every coordinate of `x`.
/// `x` is perturbed in place and restored; `f` must not record a graph it relies on.
template <typename T>
Tensor<T> finite_diff_grad(const std::function<T(const Tensor<T>&)>& f, Tensor<T> x, T eps);

/// max_i |a_i - b_i| / max(max_i |a_i|, max_i |b_i|, floor): relative error in the infinity norm.
template <typename T>
double max_rel_error(std::span<const T> a, std::span<const T> b, double floor = 1e-12);

/// Normal(0, stddev) samples; consumes `rng`.
template <typename T>
Tensor<T> randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false);

template <typename T>
Tensor<T> uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad = false);

}  // namespace dgcn
