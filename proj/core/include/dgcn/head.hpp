#pragma once

#include <optional>
#include <string>

#include "dgcn/coord_gcn.hpp"
#include "dgcn/feature_gcn.hpp"

namespace dgcn {

/// Which graph branches a head carries.
enum class Variant { baseline, coord, feat, both };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);
bool has_coord(Variant v);
bool has_feat(Variant v);

struct DGCConfig {
  std::size_t in_channels = 64;  // width of the features entering the head
  std::size_t channels = 64;     // D; D1 = D/2 and D2 = D/4
  std::size_t classes = 5;
  CoordGCNConfig coord;
  Variant variant = Variant::both;

  std::size_t node_dim() const { return channels / 2; }
  std::size_t node_count() const { return channels / 4; }
  void validate() const;
};

/// Entry 3x3 conv -> {coordinate branch, feature branch} -> X + X_S + X_F -> exit 3x3 conv
/// -> 1x1 classifier. Both 3x3 convs are followed by BN+ReLU and carry no bias.
template <typename T>
struct DGCHead {
  DGCConfig config;
  Conv3x3Params<T> entry;
  BatchNormParams<T> entry_bn;
  std::optional<CoordGCNParams<T>> coord;
  std::optional<FeatureGCNParams<T>> feat;
  Conv3x3Params<T> exit;
  BatchNormParams<T> exit_bn;
  Conv1x1Params<T> classifier;

  /// Parameters and BN buffers, in a fixed order with unique dotted names.
  ParamList<T> parameters(const std::string& prefix = "head") const;
};

/// Pointwise X + X_S + X_F.
template <typename T>
Tensor<T> fuse(const Tensor<T>& x, const Tensor<T>& xs, const Tensor<T>& xf);

/// Refined features before the exit conv: X + (coord branch) + (feature branch).
template <typename T>
Tensor<T> module_forward(const Tensor<T>& x, DGCHead<T>& head, bool training);

/// features [D_in x H x W] -> logits [C x H x W].
template <typename T>
Tensor<T> head_forward(const Tensor<T>& features, DGCHead<T>& head, bool training);

/// He fan-in init for every conv; A_F and W_F per FeatureGCNParams::init. Deterministic in `rng`.
template <typename T>
DGCHead<T> init_head(const DGCConfig& cfg, Rng& rng);

}  // namespace dgcn
