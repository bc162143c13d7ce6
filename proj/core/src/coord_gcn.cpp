#include "dgcn/coord_gcn.hpp"

#include <bit>
#include <cmath>

namespace dgcn {

std::string to_string(ProjectionMode mode) { return mode == ProjectionMode::avg_pool ? "avg-pool" : "strided-conv"; }

ProjectionMode projection_mode_from_string(const std::string& s) {
  if (s == "avg-pool") return ProjectionMode::avg_pool;
  if (s == "strided-conv") return ProjectionMode::strided_conv;
  throw ConfigError("unknown projection mode '" + s + "' (expected avg-pool or strided-conv)");
}

std::string to_string(MessageOrder order) {
  return order == MessageOrder::factor_first ? "factor-first" : "adjacency-first";
}

MessageOrder message_order_from_string(const std::string& s) {
  if (s == "factor-first") return MessageOrder::factor_first;
  if (s == "adjacency-first") return MessageOrder::adjacency_first;
  throw ConfigError("unknown message order '" + s + "' (expected factor-first or adjacency-first)");
}

void CoordGCNConfig::validate() const {
  if (downsample == 0) throw ConfigError("downsample rate must be positive");
  if (mode == ProjectionMode::strided_conv && !std::has_single_bit(downsample)) {
    throw ConfigError("strided-conv projection needs a power-of-two downsample rate, got " + std::to_string(downsample));
  }
}

std::size_t CoordGCNConfig::chain_length() const {
  return mode == ProjectionMode::strided_conv ? static_cast<std::size_t>(std::countr_zero(downsample)) : 0;
}

template <typename T>
CoordGCNParams<T> CoordGCNParams<T>::init(std::size_t channels, const CoordGCNConfig& cfg, Rng& rng) {
  cfg.validate();
  if (channels < 2 || channels % 2 != 0) throw ConfigError("coordinate branch needs an even channel count");
  const std::size_t half = channels / 2;
  CoordGCNParams p;
  for (std::size_t i = 0; i < cfg.chain_length(); ++i) p.downsampler.push_back(DepthwiseConvParams<T>::init(channels, rng));
  p.delta = Conv1x1Params<T>::init(channels, half, true, rng);
  p.psi = Conv1x1Params<T>::init(channels, half, true, rng);
  p.upsilon = Conv1x1Params<T>::init(channels, half, true, rng);
  p.w_s = randn<T>({half, half}, rng, std::sqrt(1.0 / static_cast<double>(half)), true);
  p.xi = Conv1x1Params<T>::init(half, channels, true, rng);
  return p;
}

template <typename T>
void CoordGCNParams<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < downsampler.size(); ++i) downsampler[i].collect(out, prefix + ".down" + std::to_string(i));
  delta.collect(out, prefix + ".delta");
  psi.collect(out, prefix + ".psi");
  upsilon.collect(out, prefix + ".upsilon");
  out.push_back({prefix + ".w_s", w_s, true});
  xi.collect(out, prefix + ".xi");
}

template <typename T>
Tensor<T> project_coord(const Tensor<T>& x, const CoordGCNConfig& cfg, const CoordGCNParams<T>& params) {
  cfg.validate();
  if (x.ndim() != 3) throw ShapeError("project_coord: expected [D x H x W], got " + shape_string(x.shape()));
  const std::size_t d = cfg.downsample, channels = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h % d != 0 || w % d != 0) {
    throw ShapeError("project_coord: downsample rate " + std::to_string(d) + " does not divide " + shape_string(x.shape()));
  }
  Tensor<T> grid;
  if (cfg.mode == ProjectionMode::avg_pool) {
    grid = d == 1 ? x : avg_pool(x, d);
  } else {
    if (params.downsampler.size() != cfg.chain_length()) {
      throw ShapeError("project_coord: parameters hold " + std::to_string(params.downsampler.size()) +
                       " downsampling convs, config needs " + std::to_string(cfg.chain_length()));
    }
    grid = x;
    for (const auto& stage : params.downsampler) grid = depthwise3x3_s2(grid, stage);
  }
  const std::size_t n = (h / d) * (w / d);
  return transpose(reshape(grid, {channels, n}));
}

template <typename T>
Tensor<T> coord_message(const Tensor<T>& v, const CoordGCNParams<T>& params, MessageOrder order, bool scale_by_nodes) {
  auto dv = linear(v, params.delta);
  auto pv = linear(v, params.psi);
  auto uv = linear(v, params.upsilon);
  const T node_scale = T(1) / static_cast<T>(v.dim(0));
  Tensor<T> aggregated;
  if (order == MessageOrder::adjacency_first) {
    auto affinity = matmul(dv, transpose(pv));  // [n x n]
    if (scale_by_nodes) affinity = scale(affinity, node_scale);
    aggregated = matmul(affinity, uv);
  } else {
    auto factor = matmul(transpose(pv), uv);  // [D/2 x D/2]
    if (scale_by_nodes) factor = scale(factor, node_scale);
    aggregated = matmul(dv, factor);
  }
  return matmul(aggregated, params.w_s);
}

template <typename T>
Tensor<T> reproject_coord(const Tensor<T>& m, const CoordGCNParams<T>& params, std::size_t h, std::size_t w,
                          std::size_t d) {
  if (d == 0 || h % d != 0 || w % d != 0) {
    throw ShapeError("reproject_coord: rate " + std::to_string(d) + " does not divide " + std::to_string(h) + "x" +
                     std::to_string(w));
  }
  const std::size_t gh = h / d, gw = w / d;
  if (m.ndim() != 2 || m.dim(0) != gh * gw) {
    throw ShapeError("reproject_coord: expected " + std::to_string(gh * gw) + " nodes, got " + shape_string(m.shape()));
  }
  auto grid = reshape(transpose(m), {m.dim(1), gh, gw});
  auto up = d == 1 ? grid : nearest_upsample(grid, d);
  return conv1x1(up, params.xi);
}

template <typename T>
Tensor<T> coord_gcn_forward(const Tensor<T>& x, const CoordGCNConfig& cfg, const CoordGCNParams<T>& params) {
  auto nodes = project_coord(x, cfg, params);
  auto message = coord_message(nodes, params, cfg.order, cfg.scale_by_nodes);
  return reproject_coord(message, params, x.dim(1), x.dim(2), cfg.downsample);
}

#define DGCN_INSTANTIATE_COORD(T)                                                                             \
  template struct CoordGCNParams<T>;                                                                          \
  template Tensor<T> project_coord(const Tensor<T>&, const CoordGCNConfig&, const CoordGCNParams<T>&);        \
  template Tensor<T> coord_message(const Tensor<T>&, const CoordGCNParams<T>&, MessageOrder, bool);           \
  template Tensor<T> reproject_coord(const Tensor<T>&, const CoordGCNParams<T>&, std::size_t, std::size_t,    \
                                     std::size_t);                                                            \
  template Tensor<T> coord_gcn_forward(const Tensor<T>&, const CoordGCNConfig&, const CoordGCNParams<T>&);

DGCN_INSTANTIATE_COORD(float)
DGCN_INSTANTIATE_COORD(double)

}  // namespace dgcn
