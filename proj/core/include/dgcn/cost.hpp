#pragma once

// Analytic parameter and FLOP accounting. Conventions:
//   - one multiply-accumulate = 2 FLOPs (conv1x1 = 2 N D_in D_out, matmul = 2 m k n);
//   - BN, ReLU, pooling, upsampling and softmax cost 1 FLOP per output element;
//   - bias additions are folded into the MAC count and not tallied separately;
//   - parameters are learnable scalars (weights, biases, BN gamma/beta), never running stats.

#include <cstdint>
#include <string>
#include <vector>

#include "dgcn/head.hpp"

namespace dgcn {

struct CostItem {
  std::string submodule;
  std::uint64_t params = 0;
  std::uint64_t flops = 0;
  std::string order;  // evaluation-order tag, empty when the item does not depend on it
  bool module = true; // false for the surrounding head layers (entry/exit conv, classifier)
};

struct CostReport {
  std::vector<CostItem> items;
  MessageOrder order = MessageOrder::factor_first;

  std::uint64_t module_params() const;
  std::uint64_t module_flops() const;
  std::uint64_t total_params() const;
  std::uint64_t total_flops() const;
};

/// Input to the accounting: batch x channels x height x width.
struct CostShape {
  std::size_t batch = 1;
  std::size_t channels = 512;
  std::size_t height = 128;
  std::size_t width = 128;

  /// Parses "1x512x128x128".
  static CostShape parse(const std::string& text);
  std::string str() const;
};

/// Itemized costs of a head whose width D equals `shape.channels`. Items flagged
/// `module` make up the graph module proper (both branches + fusion).
CostReport count_costs(const DGCConfig& cfg, const CostShape& shape, MessageOrder order);

/// FLOPs of the coordinate message on n nodes of width `half` (= D/2), including the W_S product.
std::uint64_t coord_message_flops(std::uint64_t n, std::uint64_t half, MessageOrder order, bool scale_by_nodes = false);

/// Closed-form trainable-parameter count of the graph module (both branches), with h = D/2, q = D/4, L = log2 d:
///   coordinate: 9 L D + 3 (D h + h) + h^2 + (h D + D)
///   feature:    (D h + h) + 2h + D q + 2q + q^2 + h^2 + (h D + D) + 2D
std::uint64_t closed_form_module_params(std::uint64_t channels, std::size_t downsample, ProjectionMode mode);

/// Closed-form count for the full head: module + entry 3x3 (9 D_in D + 2D) + exit 3x3 (9 D^2 + 2D) + classifier (D C + C),
/// restricted to the branches enabled by the variant.
std::uint64_t closed_form_head_params(const DGCConfig& cfg);

/// Trainable scalars actually held by a constructed head.
template <typename T>
std::uint64_t count_params(const DGCHead<T>& head);

/// Costs of a full-resolution pairwise-affinity (non-local) block at the same width conventions:
/// query/key/value 1x1 convs D -> D/2, N x N dot-product affinity, softmax, aggregation,
/// output 1x1 conv D/2 -> D with BN, residual add. Comparison baseline only.
CostReport nonlocal_reference(const CostShape& shape);

/// Target figures for the same input (1x512x128x128).
inline constexpr double kTargetModuleGflops = 14.15;
inline constexpr std::uint64_t kTargetModuleParams = 1'240'704;
inline constexpr double kTargetNonlocalGflops = 24.87;
inline constexpr std::uint64_t kTargetNonlocalParams = 1'496'224;

std::string render_table(const CostReport& report, bool csv);

}  // namespace dgcn
