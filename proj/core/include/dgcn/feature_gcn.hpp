#pragma once

// Feature-space graph branch. A learned projection phi(X) mixes all N pixels into
// D2 nodes of width D1; the nodes exchange information through (I - A_F) and W_F,
// and the reused projection scatters the result back onto the pixel grid.

#include <string>

#include "dgcn/nn.hpp"

namespace dgcn {

template <typename T>
struct FeatureGCNParams {
  Conv1x1Params<T> theta;   // D -> D1, with bias
  BatchNormParams<T> theta_bn;
  Conv1x1Params<T> phi;     // D -> D2, no bias
  BatchNormParams<T> phi_bn;
  Tensor<T> a_f;            // [D2 x D2]
  Tensor<T> w_f;            // [D1 x D1]
  Conv1x1Params<T> reproj;  // D1 -> D, with bias
  BatchNormParams<T> reproj_bn;

  std::size_t channels() const { return theta.in_channels(); }
  std::size_t node_dim() const { return theta.out_channels(); }   // D1
  std::size_t node_count() const { return phi.out_channels(); }   // D2

  /// D1 = D/2, D2 = D/4; A_F and W_F drawn from N(0, 0.01^2).
  static FeatureGCNParams init(std::size_t channels, Rng& rng);
  void collect(ParamList<T>& out, const std::string& prefix) const;
};

template <typename T>
struct FeatureProjection {
  Tensor<T> projection;  // P: [N x D2], raw phi(X), reused for reprojection
  Tensor<T> nodes;       // V_F: [D2 x D1]
};

/// V_F = P^T theta from precomputed maps theta [D1 x H x W] and p_map [D2 x H x W].
template <typename T>
Tensor<T> aggregate_nodes(const Tensor<T>& p_map, const Tensor<T>& theta_map);

/// Projects x onto the feature-space nodes. BN+ReLU follow theta and phi on the path that
/// builds V_F; the returned projection P is the raw phi output.
template <typename T>
FeatureProjection<T> project_feature(const Tensor<T>& x, FeatureGCNParams<T>& params, bool training);

/// M_F = (I - A_F) V_F W_F.
template <typename T>
Tensor<T> feature_message(const Tensor<T>& nodes, const Tensor<T>& a_f, const Tensor<T>& w_f);

/// reproj(P M_F) reshaped to [D x H x W], without the trailing BN+ReLU.
template <typename T>
Tensor<T> reproject_feature(const Tensor<T>& projection, const Tensor<T>& message, const FeatureGCNParams<T>& params,
                            std::size_t h, std::size_t w);

/// project -> message -> reproject -> BN -> ReLU.
template <typename T>
Tensor<T> feature_gcn_forward(const Tensor<T>& x, FeatureGCNParams<T>& params, bool training);

}  // namespace dgcn
