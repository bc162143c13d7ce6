#include "dgcn/nn.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "gemm.hpp"

namespace dgcn {

namespace {

template <typename T>
void require_map(const Tensor<T>& x, const char* op) {
  if (x.ndim() != 3) throw ShapeError(std::string(op) + ": expected a [D x H x W] map, got " + shape_string(x.shape()));
}

template <typename T>
void require_channels(const Tensor<T>& x, std::size_t expected, const char* op) {
  if (x.dim(0) != expected) {
    throw ShapeError(std::string(op) + ": input has " + std::to_string(x.dim(0)) + " channels, parameters expect " +
                     std::to_string(expected));
  }
}

template <typename T>
Tensor<T> he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  return randn<T>(std::move(shape), rng, std::sqrt(2.0 / static_cast<double>(fan_in)), true);
}

// cols[(c*9 + ky*3 + kx), y*W + x] = src[c, y+ky-1, x+kx-1] with zero padding.
template <typename T>
void im2col3x3(const T* src, std::size_t channels, std::size_t h, std::size_t w, T* cols) {
  const std::size_t n = h * w;
  for (std::size_t c = 0; c < channels; ++c) {
    const T* plane = src + c * n;
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        T* row = cols + (c * 9 + ky * 3 + kx) * n;
        for (std::size_t y = 0; y < h; ++y) {
          T* dst = row + y * w;
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(dst, dst + w, T(0));
            continue;
          }
          const T* srow = plane + static_cast<std::size_t>(sy) * w;
          if (kx == 0) {
            dst[0] = T(0);
            std::copy(srow, srow + w - 1, dst + 1);
          } else if (kx == 1) {
            std::copy(srow, srow + w, dst);
          } else {
            std::copy(srow + 1, srow + w, dst);
            dst[w - 1] = T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im3x3(const T* cols, std::size_t channels, std::size_t h, std::size_t w, T* dst) {
  const std::size_t n = h * w;
  for (std::size_t c = 0; c < channels; ++c) {
    T* plane = dst + c * n;
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        const T* row = cols + (c * 9 + ky * 3 + kx) * n;
        for (std::size_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
          const T* srow = row + y * w;
          T* prow = plane + static_cast<std::size_t>(sy) * w;
          if (kx == 0) {
            for (std::size_t x = 1; x < w; ++x) prow[x - 1] += srow[x];
          } else if (kx == 1) {
            for (std::size_t x = 0; x < w; ++x) prow[x] += srow[x];
          } else {
            for (std::size_t x = 0; x + 1 < w; ++x) prow[x + 1] += srow[x];
          }
        }
      }
    }
  }
}

template <typename T>
void add_bias_rows(std::vector<T>& out, const Tensor<T>& bias, std::size_t rows, std::size_t cols) {
  auto b = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = out.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) row[c] += b[r];
  }
}

}  // namespace

template <typename T>
std::size_t count_trainable(const ParamList<T>& params) {
  std::size_t total = 0;
  for (const auto& p : params) {
    if (p.trainable) total += p.tensor.numel();
  }
  return total;
}

template <typename T>
Conv1x1Params<T> Conv1x1Params<T>::init(std::size_t in, std::size_t out, bool with_bias, Rng& rng) {
  Conv1x1Params p;
  p.weight = he_normal<T>({out, in}, in, rng);
  if (with_bias) p.bias = Tensor<T>::zeros({out}, true);
  return p;
}

template <typename T>
void Conv1x1Params<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight, true});
  if (bias.defined()) out.push_back({prefix + ".bias", bias, true});
}

template <typename T>
Conv3x3Params<T> Conv3x3Params<T>::init(std::size_t in, std::size_t out, bool with_bias, Rng& rng) {
  Conv3x3Params p;
  p.weight = he_normal<T>({out, in, 3, 3}, in * 9, rng);
  if (with_bias) p.bias = Tensor<T>::zeros({out}, true);
  return p;
}

template <typename T>
void Conv3x3Params<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight, true});
  if (bias.defined()) out.push_back({prefix + ".bias", bias, true});
}

template <typename T>
DepthwiseConvParams<T> DepthwiseConvParams<T>::init(std::size_t channels, Rng& rng) {
  return {he_normal<T>({channels, 3, 3}, 9, rng)};
}

template <typename T>
void DepthwiseConvParams<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight, true});
}

template <typename T>
BatchNormParams<T> BatchNormParams<T>::init(std::size_t channels) {
  BatchNormParams p;
  p.gamma = Tensor<T>::full({channels}, T(1), true);
  p.beta = Tensor<T>::zeros({channels}, true);
  p.running_mean = Tensor<T>::zeros({channels});
  p.running_var = Tensor<T>::full({channels}, T(1));
  return p;
}

template <typename T>
void BatchNormParams<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  out.push_back({prefix + ".gamma", gamma, true});
  out.push_back({prefix + ".beta", beta, true});
  out.push_back({prefix + ".running_mean", running_mean, false});
  out.push_back({prefix + ".running_var", running_var, false});
}

template <typename T>
Tensor<T> conv1x1(const Tensor<T>& x, const Conv1x1Params<T>& p) {
  require_map(x, "conv1x1");
  require_channels(x, p.in_channels(), "conv1x1");
  const std::size_t din = p.in_channels(), dout = p.out_channels();
  const std::size_t h = x.dim(1), w = x.dim(2), n = h * w;
  std::vector<T> out(dout * n);
  detail::gemm<T>(false, false, dout, n, din, T(1), p.weight.data().data(), x.data().data(), T(0), out.data());
  const bool has_bias = p.has_bias();
  if (has_bias) add_bias_rows(out, p.bias, dout, n);
  auto backward = [din, dout, n, has_bias](detail::Node<T>& self) {
    auto& nx = *self.inputs[0];
    auto& nw = *self.inputs[1];
    if (nx.requires_grad) {
      detail::gemm<T>(true, false, din, n, dout, T(1), nw.data.data(), self.grad.data(), T(1),
                      nx.grad_buffer().data());
    }
    if (nw.requires_grad) {
      detail::gemm<T>(false, true, dout, din, n, T(1), self.grad.data(), nx.data.data(), T(1),
                      nw.grad_buffer().data());
    }
    if (has_bias && self.inputs[2]->requires_grad) {
      auto gb = self.inputs[2]->grad_buffer();
      for (std::size_t o = 0; o < dout; ++o) {
        T acc = 0;
        for (std::size_t i = 0; i < n; ++i) acc += self.grad[o * n + i];
        gb[o] += acc;
      }
    }
  };
  if (has_bias) return detail::make_result<T>({dout, h, w}, std::move(out), {x, p.weight, p.bias}, backward, "conv1x1");
  return detail::make_result<T>({dout, h, w}, std::move(out), {x, p.weight}, backward, "conv1x1");
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Conv1x1Params<T>& p) {
  if (x.ndim() != 2 || x.dim(1) != p.in_channels()) {
    throw ShapeError("linear: input " + shape_string(x.shape()) + " does not match weight " +
                     shape_string(p.weight.shape()));
  }
  const std::size_t rows = x.dim(0), din = p.in_channels(), dout = p.out_channels();
  std::vector<T> out(rows * dout);
  detail::gemm<T>(false, true, rows, dout, din, T(1), x.data().data(), p.weight.data().data(), T(0), out.data());
  const bool has_bias = p.has_bias();
  if (has_bias) {
    auto b = p.bias.data();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t o = 0; o < dout; ++o) out[r * dout + o] += b[o];
  }
  auto backward = [rows, din, dout, has_bias](detail::Node<T>& self) {
    auto& nx = *self.inputs[0];
    auto& nw = *self.inputs[1];
    if (nx.requires_grad) {  // dX = dY W
      detail::gemm<T>(false, false, rows, din, dout, T(1), self.grad.data(), nw.data.data(), T(1),
                      nx.grad_buffer().data());
    }
    if (nw.requires_grad) {  // dW = dY^T X
      detail::gemm<T>(true, false, dout, din, rows, T(1), self.grad.data(), nx.data.data(), T(1),
                      nw.grad_buffer().data());
    }
    if (has_bias && self.inputs[2]->requires_grad) {
      auto gb = self.inputs[2]->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t o = 0; o < dout; ++o) gb[o] += self.grad[r * dout + o];
    }
  };
  if (has_bias) return detail::make_result<T>({rows, dout}, std::move(out), {x, p.weight, p.bias}, backward, "linear");
  return detail::make_result<T>({rows, dout}, std::move(out), {x, p.weight}, backward, "linear");
}

template <typename T>
Tensor<T> conv3x3(const Tensor<T>& x, const Conv3x3Params<T>& p) {
  require_map(x, "conv3x3");
  require_channels(x, p.in_channels(), "conv3x3");
  const std::size_t din = p.in_channels(), dout = p.out_channels();
  const std::size_t h = x.dim(1), w = x.dim(2), n = h * w, k = din * 9;
  auto cols = std::make_shared<std::vector<T>>(k * n);
  im2col3x3(x.data().data(), din, h, w, cols->data());
  std::vector<T> out(dout * n);
  detail::gemm<T>(false, false, dout, n, k, T(1), p.weight.data().data(), cols->data(), T(0), out.data());
  const bool has_bias = p.bias.defined();
  if (has_bias) add_bias_rows(out, p.bias, dout, n);
  auto backward = [cols, din, dout, h, w, n, k, has_bias](detail::Node<T>& self) {
    auto& nx = *self.inputs[0];
    auto& nw = *self.inputs[1];
    if (nw.requires_grad) {
      detail::gemm<T>(false, true, dout, k, n, T(1), self.grad.data(), cols->data(), T(1), nw.grad_buffer().data());
    }
    if (nx.requires_grad) {
      std::vector<T> dcols(k * n);
      detail::gemm<T>(true, false, k, n, dout, T(1), nw.data.data(), self.grad.data(), T(0), dcols.data());
      col2im3x3(dcols.data(), din, h, w, nx.grad_buffer().data());
    }
    if (has_bias && self.inputs[2]->requires_grad) {
      auto gb = self.inputs[2]->grad_buffer();
      for (std::size_t o = 0; o < dout; ++o) {
        T acc = 0;
        for (std::size_t i = 0; i < n; ++i) acc += self.grad[o * n + i];
        gb[o] += acc;
      }
    }
  };
  if (has_bias) return detail::make_result<T>({dout, h, w}, std::move(out), {x, p.weight, p.bias}, backward, "conv3x3");
  return detail::make_result<T>({dout, h, w}, std::move(out), {x, p.weight}, backward, "conv3x3");
}

template <typename T>
Tensor<T> depthwise3x3_s2(const Tensor<T>& x, const DepthwiseConvParams<T>& p) {
  require_map(x, "depthwise3x3_s2");
  require_channels(x, p.channels(), "depthwise3x3_s2");
  const std::size_t d = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h < 2 || w < 2) throw ShapeError("depthwise3x3_s2: spatial extents must be at least 2, got " + shape_string(x.shape()));
  const std::size_t oh = (h + 1) / 2, ow = (w + 1) / 2;
  // Visits every (output pixel, tap) pair whose source lies inside the map.
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t c = 0; c < d; ++c)
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ky = 0; ky < 3; ++ky) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(2 * oy + ky) - 1;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t ox = 0; ox < ow; ++ox)
            for (std::size_t kx = 0; kx < 3; ++kx) {
              const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(2 * ox + kx) - 1;
              if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
              fn((c * oh + oy) * ow + ox, (c * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx),
                 c * 9 + ky * 3 + kx);
            }
        }
  };
  std::vector<T> out(d * oh * ow, T(0));
  auto src = x.data();
  auto ker = p.weight.data();
  for_each_tap([&](std::size_t o, std::size_t s, std::size_t kidx) { out[o] += ker[kidx] * src[s]; });
  return detail::make_result<T>(
      {d, oh, ow}, std::move(out), {x, p.weight},
      [for_each_tap](detail::Node<T>& self) {
        auto& nx = *self.inputs[0];
        auto& nw = *self.inputs[1];
        if (nx.requires_grad) {
          auto gx = nx.grad_buffer();
          for_each_tap([&](std::size_t o, std::size_t s, std::size_t kidx) { gx[s] += nw.data[kidx] * self.grad[o]; });
        }
        if (nw.requires_grad) {
          auto gw = nw.grad_buffer();
          for_each_tap([&](std::size_t o, std::size_t s, std::size_t kidx) { gw[kidx] += nx.data[s] * self.grad[o]; });
        }
      },
      "depthwise3x3_s2");
}

template <typename T>
Tensor<T> avg_pool(const Tensor<T>& x, std::size_t d) {
  require_map(x, "avg_pool");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (d == 0 || h % d != 0 || w % d != 0) {
    throw ShapeError("avg_pool: rate " + std::to_string(d) + " does not divide " + shape_string(x.shape()));
  }
  const std::size_t oh = h / d, ow = w / d;
  const T inv = T(1) / static_cast<T>(d * d);
  // Sums run over offsets from each block's top-left pixel, so a constant block maps to
  // exactly that constant (avg_pool after nearest_upsample is an exact identity).
  std::vector<T> out(c * oh * ow, T(0));
  const T* src = x.data().data();
  for (std::size_t band = 0; band < c * oh; ++band) {
    const T* ref = src + band * d * w;
    T* o = out.data() + band * ow;
    for (std::size_t r = 0; r < d; ++r) {
      const T* in = ref + r * w;
      for (std::size_t ox = 0; ox < ow; ++ox)
        for (std::size_t k = 0; k < d; ++k) o[ox] += in[ox * d + k] - ref[ox * d];
    }
    for (std::size_t ox = 0; ox < ow; ++ox) o[ox] = ref[ox * d] + o[ox] * inv;
  }
  return detail::make_result<T>(
      {c, oh, ow}, std::move(out), {x},
      [c, h, w, d, oh, ow, inv](detail::Node<T>& self) {
        T* g = self.inputs[0]->grad_buffer().data();
        for (std::size_t row = 0; row < c * h; ++row) {
          T* gi = g + row * w;
          const T* up = self.grad.data() + (row / h * oh + row % h / d) * ow;
          for (std::size_t ox = 0; ox < ow; ++ox)
            for (std::size_t k = 0; k < d; ++k) gi[ox * d + k] += inv * up[ox];
        }
      },
      "avg_pool");
}

template <typename T>
Tensor<T> nearest_upsample(const Tensor<T>& x, std::size_t d) {
  require_map(x, "nearest_upsample");
  if (d == 0) throw ShapeError("nearest_upsample: rate must be at least 1");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t oh = h * d, ow = w * d;
  std::vector<T> out(c * oh * ow);
  const T* src = x.data().data();
  for (std::size_t row = 0; row < c * oh; ++row) {
    const T* in = src + (row / oh * h + row % oh / d) * w;
    T* o = out.data() + row * ow;
    for (std::size_t ix = 0; ix < w; ++ix)
      for (std::size_t k = 0; k < d; ++k) o[ix * d + k] = in[ix];
  }
  return detail::make_result<T>(
      {c, oh, ow}, std::move(out), {x},
      [c, h, w, d, oh, ow](detail::Node<T>& self) {
        T* g = self.inputs[0]->grad_buffer().data();
        for (std::size_t row = 0; row < c * oh; ++row) {
          T* gi = g + (row / oh * h + row % oh / d) * w;
          const T* up = self.grad.data() + row * ow;
          for (std::size_t ix = 0; ix < w; ++ix)
            for (std::size_t k = 0; k < d; ++k) gi[ix] += up[ix * d + k];
        }
      },
      "nearest_upsample");
}

template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, BatchNormParams<T>& p, bool training) {
  require_map(x, "batchnorm");
  require_channels(x, p.channels(), "batchnorm");
  const std::size_t c = x.dim(0), n = x.dim(1) * x.dim(2);
  auto src = x.data();
  auto gamma = p.gamma.data();
  auto beta = p.beta.data();
  auto xhat = std::make_shared<std::vector<T>>(c * n);
  auto inv_std = std::make_shared<std::vector<T>>(c);
  std::vector<T> out(c * n);
  auto rmean = p.running_mean.mutable_data();
  auto rvar = p.running_var.mutable_data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    const T* row = src.data() + ch * n;
    T mean, var;
    if (training) {
      double s = 0;
#pragma omp simd reduction(+ : s)
      for (std::size_t i = 0; i < n; ++i) s += row[i];
      const double m = s / static_cast<double>(n);
      double ss = 0;
#pragma omp simd reduction(+ : ss)
      for (std::size_t i = 0; i < n; ++i) ss += (row[i] - m) * (row[i] - m);
      mean = static_cast<T>(m);
      var = static_cast<T>(ss / static_cast<double>(n));
      const T unbiased = n > 1 ? static_cast<T>(ss / static_cast<double>(n - 1)) : var;
      rmean[ch] = (T(1) - p.momentum) * rmean[ch] + p.momentum * mean;
      rvar[ch] = (T(1) - p.momentum) * rvar[ch] + p.momentum * unbiased;
    } else {
      mean = rmean[ch];
      var = rvar[ch];
    }
    const T istd = T(1) / std::sqrt(var + p.eps);
    (*inv_std)[ch] = istd;
    T* xh = xhat->data() + ch * n;
    T* o = out.data() + ch * n;
    for (std::size_t i = 0; i < n; ++i) {
      xh[i] = (row[i] - mean) * istd;
      o[i] = gamma[ch] * xh[i] + beta[ch];
    }
  }
  return detail::make_result<T>(
      x.shape(), std::move(out), {x, p.gamma, p.beta},
      [xhat, inv_std, c, n, training](detail::Node<T>& self) {
        auto& nx = *self.inputs[0];
        auto& ng = *self.inputs[1];
        auto& nb = *self.inputs[2];
        for (std::size_t ch = 0; ch < c; ++ch) {
          const T* dy = self.grad.data() + ch * n;
          const T* xh = xhat->data() + ch * n;
          T sum_dy = 0, sum_dy_xh = 0;
#pragma omp simd reduction(+ : sum_dy, sum_dy_xh)
          for (std::size_t i = 0; i < n; ++i) {
            sum_dy += dy[i];
            sum_dy_xh += dy[i] * xh[i];
          }
          if (ng.requires_grad) ng.grad_buffer()[ch] += sum_dy_xh;
          if (nb.requires_grad) nb.grad_buffer()[ch] += sum_dy;
          if (!nx.requires_grad) continue;
          T* dx = nx.grad_buffer().data() + ch * n;
          const T scale = ng.data[ch] * (*inv_std)[ch];
          if (training) {
            const T mean_dy = sum_dy / static_cast<T>(n);
            const T mean_dy_xh = sum_dy_xh / static_cast<T>(n);
            for (std::size_t i = 0; i < n; ++i) dx[i] += scale * (dy[i] - mean_dy - xh[i] * mean_dy_xh);
          } else {
            for (std::size_t i = 0; i < n; ++i) dx[i] += scale * dy[i];
          }
        }
      },
      "batchnorm");
}

template <typename T>
Tensor<T> gcn_layer(const Tensor<T>& adjacency, const Tensor<T>& x, const Tensor<T>& weight, Activation sigma) {
  auto z = matmul(matmul(adjacency, x), weight);
  return sigma == Activation::relu ? relu(z) : z;
}

template <typename T>
Tensor<T> nearest_resize(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  require_map(x, "nearest_resize");
  if (out_h == 0 || out_w == 0) throw ShapeError("nearest_resize: target extents must be positive");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  std::vector<T> out(c * out_h * out_w);
  auto src = x.data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < out_h; ++y) {
      const std::size_t sy = y * h / out_h;
      for (std::size_t xx = 0; xx < out_w; ++xx) out[(ch * out_h + y) * out_w + xx] = src[(ch * h + sy) * w + xx * w / out_w];
    }
  return Tensor<T>::from({c, out_h, out_w}, std::move(out));
}

#define DGCN_INSTANTIATE_NN(T)                                                                              \
  template std::size_t count_trainable(const ParamList<T>&);                                                \
  template struct Conv1x1Params<T>;                                                                         \
  template struct Conv3x3Params<T>;                                                                         \
  template struct DepthwiseConvParams<T>;                                                                   \
  template struct BatchNormParams<T>;                                                                       \
  template Tensor<T> conv1x1(const Tensor<T>&, const Conv1x1Params<T>&);                                    \
  template Tensor<T> linear(const Tensor<T>&, const Conv1x1Params<T>&);                                     \
  template Tensor<T> conv3x3(const Tensor<T>&, const Conv3x3Params<T>&);                                    \
  template Tensor<T> depthwise3x3_s2(const Tensor<T>&, const DepthwiseConvParams<T>&);                      \
  template Tensor<T> avg_pool(const Tensor<T>&, std::size_t);                                               \
  template Tensor<T> nearest_upsample(const Tensor<T>&, std::size_t);                                       \
  template Tensor<T> batchnorm(const Tensor<T>&, BatchNormParams<T>&, bool);                                \
  template Tensor<T> gcn_layer(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Activation);           \
  template Tensor<T> nearest_resize(const Tensor<T>&, std::size_t, std::size_t);

DGCN_INSTANTIATE_NN(float)
DGCN_INSTANTIATE_NN(double)

}  // namespace dgcn
