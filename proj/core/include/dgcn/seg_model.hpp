#pragma once

#include <vector>

#include "dgcn/head.hpp"
#include "dgcn/metrics.hpp"
#include "dgcn/toy_data.hpp"

namespace dgcn {

/// Stride-preserving stack of 3x3 conv + BN + ReLU layers (receptive field 2L+1)
/// standing in for a pretrained backbone.
template <typename T>
struct Backbone {
  std::vector<Conv3x3Params<T>> convs;
  std::vector<BatchNormParams<T>> bns;

  static Backbone init(std::size_t in_channels, std::size_t width, std::size_t layers, Rng& rng);
  std::size_t out_channels() const { return convs.back().out_channels(); }
  void collect(ParamList<T>& out, const std::string& prefix) const;
  Tensor<T> forward(const Tensor<T>& image, bool training);
};

struct SegModelConfig {
  DGCConfig head;  // head.in_channels is the backbone width
  std::size_t backbone_layers = 4;
  std::size_t image_channels = 3;
};

template <typename T>
struct SegModel {
  SegModelConfig config;
  Backbone<T> backbone;
  DGCHead<T> head;

  static SegModel init(const SegModelConfig& cfg, Rng& rng);
  ParamList<T> parameters() const;
  /// image [3 x H x W] -> logits [C x H x W].
  Tensor<T> forward(const Tensor<T>& image, bool training);
};

/// Converts a stored f32 image to the model dtype.
template <typename T>
Tensor<T> image_as(const Tensor<float>& image);

/// Extent of the rescaled side: the nearest multiple of `rate` to scale * extent.
/// Throws ConfigError when that falls below `rate`.
std::size_t scaled_extent(std::size_t extent, double scale, std::size_t rate);

/// Averages per-pixel class probabilities over rescaled copies of the image (nearest
/// resampling both ways, eval-mode forward) and returns log of the average, [C x H x W].
template <typename T>
Tensor<T> multi_scale_infer(SegModel<T>& model, const Tensor<T>& image, const std::vector<double>& scales);

/// Eval-mode mIoU of argmax predictions over `samples`. Empty `scales` means single-scale logits.
template <typename T>
IoUResult evaluate(SegModel<T>& model, const std::vector<ToySample>& samples, const std::vector<double>& scales = {});

template <typename T>
LabelMap predict(SegModel<T>& model, const Tensor<float>& image, const std::vector<double>& scales = {});

}  // namespace dgcn
