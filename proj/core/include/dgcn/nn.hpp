#pragma once

// Convolution, pooling, resampling and normalization primitives on single
// feature maps laid out channel-major as [D x H x W].

#include <string>
#include <vector>

#include "dgcn/ops.hpp"

namespace dgcn {

/// A parameter or buffer tensor with its checkpoint name. `trainable` is false for
/// BN running statistics, which are persisted but not optimized or counted.
template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
  bool trainable = true;
};

template <typename T>
using ParamList = std::vector<NamedTensor<T>>;

template <typename T>
std::size_t count_trainable(const ParamList<T>& params);

enum class Activation { identity, relu };

template <typename T>
struct Conv1x1Params {
  Tensor<T> weight;  // [out x in]
  Tensor<T> bias;    // [out], undefined when the conv has no bias

  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t out_channels() const { return weight.dim(0); }
  bool has_bias() const { return bias.defined(); }

  /// He fan-in normal weights, zero bias.
  static Conv1x1Params init(std::size_t in, std::size_t out, bool with_bias, Rng& rng);
  void collect(ParamList<T>& out, const std::string& prefix) const;
};

/// Dense 3x3 convolution, stride 1, zero padding 1.
template <typename T>
struct Conv3x3Params {
  Tensor<T> weight;  // [out x in x 3 x 3]
  Tensor<T> bias;    // optional [out]

  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t out_channels() const { return weight.dim(0); }

  static Conv3x3Params init(std::size_t in, std::size_t out, bool with_bias, Rng& rng);
  void collect(ParamList<T>& out, const std::string& prefix) const;
};

/// Per-channel 3x3 kernels for the stride-2, pad-1 downsampling conv. No bias.
template <typename T>
struct DepthwiseConvParams {
  Tensor<T> weight;  // [D x 3 x 3]

  std::size_t channels() const { return weight.dim(0); }

  static DepthwiseConvParams init(std::size_t channels, Rng& rng);
  void collect(ParamList<T>& out, const std::string& prefix) const;
};

template <typename T>
struct BatchNormParams {
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  std::size_t channels() const { return gamma.numel(); }

  /// gamma = 1, beta = 0, running mean 0, running var 1.
  static BatchNormParams init(std::size_t channels);
  void collect(ParamList<T>& out, const std::string& prefix) const;
};

/// out[:, h, w] = W x[:, h, w] + b.
template <typename T>
Tensor<T> conv1x1(const Tensor<T>& x, const Conv1x1Params<T>& p);

/// Row-wise affine map on node features: x [n x in] -> x W^T + b, [n x out].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Conv1x1Params<T>& p);

template <typename T>
Tensor<T> conv3x3(const Tensor<T>& x, const Conv3x3Params<T>& p);

/// Channelwise strided correlation; output extents ceil(H/2) x ceil(W/2).
template <typename T>
Tensor<T> depthwise3x3_s2(const Tensor<T>& x, const DepthwiseConvParams<T>& p);

/// Mean over non-overlapping d x d blocks; d must divide H and W.
template <typename T>
Tensor<T> avg_pool(const Tensor<T>& x, std::size_t d);

/// Replicates each pixel into a d x d block (source index = floor(target / d)).
template <typename T>
Tensor<T> nearest_upsample(const Tensor<T>& x, std::size_t d);

/// Per-channel normalization over the spatial axes. Training mode uses the map's own
/// statistics and updates the running estimates (unbiased variance); eval mode uses the
/// running estimates and leaves them untouched.
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, BatchNormParams<T>& p, bool training);

/// sigma(A X W): one graph-convolution layer over n nodes.
template <typename T>
Tensor<T> gcn_layer(const Tensor<T>& adjacency, const Tensor<T>& x, const Tensor<T>& weight, Activation sigma);

/// Nearest-neighbour resize of a [D x H x W] map to [D x out_h x out_w] without gradient,
/// source index floor(target * H / out_h).
template <typename T>
Tensor<T> nearest_resize(const Tensor<T>& x, std::size_t out_h, std::size_t out_w);

}  // namespace dgcn
