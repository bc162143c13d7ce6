#include "dgcn/ops.hpp"

#include <algorithm>
#include <cmath>

#include "gemm.hpp"

namespace dgcn {

namespace {

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

template <typename T>
void require_matrix(const Tensor<T>& a, const char* op) {
  if (a.ndim() != 2) throw ShapeError(std::string(op) + ": expected a 2-D tensor, got " + shape_string(a.shape()));
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner extents differ, " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  std::vector<T> out(m * n);
  detail::gemm<T>(false, false, m, n, k, T(1), a.data().data(), b.data().data(), T(0), out.data());
  return detail::make_result<T>(
      {m, n}, std::move(out), {a, b},
      [m, n, k](detail::Node<T>& self) {
        auto& na = *self.inputs[0];
        auto& nb = *self.inputs[1];
        if (na.requires_grad) {  // dA = dC B^T
          detail::gemm<T>(false, true, m, k, n, T(1), self.grad.data(), nb.data.data(), T(1),
                          na.grad_buffer().data());
        }
        if (nb.requires_grad) {  // dB = A^T dC
          detail::gemm<T>(true, false, k, n, m, T(1), na.data.data(), self.grad.data(), T(1),
                          nb.grad_buffer().data());
        }
      },
      "matmul");
}

namespace {
// dst[j][i] (+)= src[i][j] for an m x n source, in cache-sized tiles.
template <typename T>
void transpose_into(const T* src, T* dst, std::size_t m, std::size_t n, bool accumulate) {
  constexpr std::size_t tile = 32;
  for (std::size_t i0 = 0; i0 < m; i0 += tile)
    for (std::size_t j0 = 0; j0 < n; j0 += tile) {
      const std::size_t i1 = std::min(m, i0 + tile), j1 = std::min(n, j0 + tile);
      for (std::size_t i = i0; i < i1; ++i)
        for (std::size_t j = j0; j < j1; ++j) {
          if (accumulate) dst[j * m + i] += src[i * n + j];
          else dst[j * m + i] = src[i * n + j];
        }
    }
}
}  // namespace

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_matrix(a, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<T> out(m * n);
  transpose_into(a.data().data(), out.data(), m, n, false);
  return detail::make_result<T>(
      {n, m}, std::move(out), {a},
      [m, n](detail::Node<T>& self) {
        transpose_into(self.grad.data(), self.inputs[0]->grad_buffer().data(), n, m, true);
      },
      "transpose");
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_string(a.shape()) + " as " + shape_string(shape));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  return detail::make_result<T>(
      std::move(shape), std::move(out), {a},
      [](detail::Node<T>& self) {
        auto g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      },
      "reshape");
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  auto x = a.data(), y = b.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return detail::make_result<T>(
      a.shape(), std::move(out), {a, b},
      [](detail::Node<T>& self) {
        for (auto& in : self.inputs) {
          if (!in->requires_grad) continue;
          auto g = in->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
      },
      "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  auto x = a.data(), y = b.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return detail::make_result<T>(
      a.shape(), std::move(out), {a, b},
      [](detail::Node<T>& self) {
        if (self.inputs[0]->requires_grad) {
          auto g = self.inputs[0]->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (self.inputs[1]->requires_grad) {
          auto g = self.inputs[1]->grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
      },
      "sub");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  auto x = a.data(), y = b.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return detail::make_result<T>(
      a.shape(), std::move(out), {a, b},
      [](detail::Node<T>& self) {
        auto& na = *self.inputs[0];
        auto& nb = *self.inputs[1];
        if (na.requires_grad) {
          auto g = na.grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * nb.data[i];
        }
        if (nb.requires_grad) {
          auto g = nb.grad_buffer();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * na.data[i];
        }
      },
      "mul");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  auto x = a.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = factor * x[i];
  return detail::make_result<T>(
      a.shape(), std::move(out), {a},
      [factor](detail::Node<T>& self) {
        auto g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
      },
      "scale");
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  auto x = a.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return detail::make_result<T>(
      a.shape(), std::move(out), {a},
      [](detail::Node<T>& self) {
        auto& in = *self.inputs[0];
        T* g = in.grad_buffer().data();
        const T* x = in.data.data();
        const T* up = self.grad.data();
        for (std::size_t i = 0; i < in.data.size(); ++i) g[i] += x[i] > T(0) ? up[i] : T(0);
      },
      "relu");
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = 0;
  for (auto v : a.data()) total += v;
  return detail::make_result<T>(
      {}, {total}, {a},
      [](detail::Node<T>& self) {
        auto g = self.inputs[0]->grad_buffer();
        const T up = self.grad[0];
        for (auto& v : g) v += up;
      },
      "sum");
}

template <typename T>
Tensor<T> finite_diff_grad(const std::function<T(const Tensor<T>&)>& f, Tensor<T> x, T eps) {
  if (!(eps > T(0))) throw std::invalid_argument("finite_diff_grad: eps must be positive");
  NoGradGuard no_grad;
  auto values = x.mutable_data();
  std::vector<T> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const T saved = values[i];
    values[i] = saved + eps;
    const T plus = f(x);
    values[i] = saved - eps;
    const T minus = f(x);
    values[i] = saved;
    if (!std::isfinite(plus) || !std::isfinite(minus)) {
      throw NumericError("finite_diff_grad: objective is not finite at coordinate " + std::to_string(i));
    }
    out[i] = (plus - minus) / (T(2) * eps);
  }
  return Tensor<T>::from(x.shape(), std::move(out));
}

template <typename T>
double max_rel_error(std::span<const T> a, std::span<const T> b, double floor) {
  if (a.size() != b.size()) throw ShapeError("max_rel_error: length mismatch");
  double diff = 0, scale_a = 0, scale_b = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    scale_a = std::max(scale_a, std::abs(static_cast<double>(a[i])));
    scale_b = std::max(scale_b, std::abs(static_cast<double>(b[i])));
  }
  return diff / std::max({scale_a, scale_b, floor});
}

template <typename T>
Tensor<T> randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  std::vector<T> values(numel(shape));
  for (auto& v : values) v = static_cast<T>(rng.normal(0.0, stddev));
  return Tensor<T>::from(std::move(shape), std::move(values), requires_grad);
}

template <typename T>
Tensor<T> uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad) {
  std::vector<T> values(numel(shape));
  for (auto& v : values) v = static_cast<T>(rng.uniform(lo, hi));
  return Tensor<T>::from(std::move(shape), std::move(values), requires_grad);
}

#define DGCN_INSTANTIATE_OPS(T)                                                                   \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> transpose(const Tensor<T>&);                                                 \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                            \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> scale(const Tensor<T>&, T);                                                  \
  template Tensor<T> relu(const Tensor<T>&);                                                      \
  template Tensor<T> sum(const Tensor<T>&);                                                       \
  template Tensor<T> finite_diff_grad(const std::function<T(const Tensor<T>&)>&, Tensor<T>, T);   \
  template double max_rel_error(std::span<const T>, std::span<const T>, double);                  \
  template Tensor<T> randn(Shape, Rng&, double, bool);                                            \
  template Tensor<T> uniform(Shape, Rng&, double, double, bool);

DGCN_INSTANTIATE_OPS(float)
DGCN_INSTANTIATE_OPS(double)

}  // namespace dgcn
