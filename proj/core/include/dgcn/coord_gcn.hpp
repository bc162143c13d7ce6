#pragma once

// Coordinate-space graph branch: spatial downsampling to n = HW/d^2 cluster nodes,
// a dot-product affinity graph over those nodes, and nearest-neighbour reprojection.
// The branch contains no normalization or nonlinearity.

#include <optional>
#include <string>
#include <vector>

#include "dgcn/nn.hpp"

namespace dgcn {

enum class ProjectionMode { avg_pool, strided_conv };

/// Evaluation order of the message (delta(V) psi(V)^T) upsilon(V) W_S.
/// adjacency_first materializes the n x n affinity; factor_first forms psi^T upsilon first.
enum class MessageOrder { adjacency_first, factor_first };

std::string to_string(ProjectionMode mode);
ProjectionMode projection_mode_from_string(const std::string& s);
std::string to_string(MessageOrder order);
MessageOrder message_order_from_string(const std::string& s);

struct CoordGCNConfig {
  std::size_t downsample = 8;
  ProjectionMode mode = ProjectionMode::avg_pool;
  MessageOrder order = MessageOrder::factor_first;
  /// Multiplies the affinity by 1/n. Off by default: the affinity is the raw dot product.
  bool scale_by_nodes = false;

  /// Throws ConfigError unless the rate is positive (and a power of two in strided mode).
  void validate() const;
  /// Number of stride-2 convs in strided mode, log2(downsample).
  std::size_t chain_length() const;
};

template <typename T>
struct CoordGCNParams {
  std::vector<DepthwiseConvParams<T>> downsampler;  // empty in avg-pool mode
  Conv1x1Params<T> delta;                           // D -> D/2
  Conv1x1Params<T> psi;                             // D -> D/2
  Conv1x1Params<T> upsilon;                         // D -> D/2
  Tensor<T> w_s;                                    // [D/2 x D/2], no bias
  Conv1x1Params<T> xi;                              // D/2 -> D

  std::size_t channels() const { return delta.in_channels(); }

  static CoordGCNParams init(std::size_t channels, const CoordGCNConfig& cfg, Rng& rng);
  void collect(ParamList<T>& out, const std::string& prefix) const;
};

/// V_S = H_S X: [D x H x W] -> [n x D], n = (H/d)(W/d), nodes in row-major grid order.
template <typename T>
Tensor<T> project_coord(const Tensor<T>& x, const CoordGCNConfig& cfg, const CoordGCNParams<T>& params);

/// M_S = f(delta(V), psi(V)^T) upsilon(V) W_S with f the dot product: [n x D] -> [n x D/2].
template <typename T>
Tensor<T> coord_message(const Tensor<T>& v, const CoordGCNParams<T>& params, MessageOrder order,
                        bool scale_by_nodes = false);

/// xi(interp(M_S)): reshape nodes to the (H/d x W/d) grid, upsample by d, restore D channels.
template <typename T>
Tensor<T> reproject_coord(const Tensor<T>& m, const CoordGCNParams<T>& params, std::size_t h, std::size_t w,
                          std::size_t d);

template <typename T>
Tensor<T> coord_gcn_forward(const Tensor<T>& x, const CoordGCNConfig& cfg, const CoordGCNParams<T>& params);

}  // namespace dgcn
