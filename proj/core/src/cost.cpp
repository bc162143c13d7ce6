#include "dgcn/cost.hpp"

#include <bit>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace dgcn {

std::uint64_t CostReport::module_params() const {
  std::uint64_t total = 0;
  for (const auto& it : items) total += it.module ? it.params : 0;
  return total;
}

std::uint64_t CostReport::module_flops() const {
  std::uint64_t total = 0;
  for (const auto& it : items) total += it.module ? it.flops : 0;
  return total;
}

std::uint64_t CostReport::total_params() const {
  std::uint64_t total = 0;
  for (const auto& it : items) total += it.params;
  return total;
}

std::uint64_t CostReport::total_flops() const {
  std::uint64_t total = 0;
  for (const auto& it : items) total += it.flops;
  return total;
}

CostShape CostShape::parse(const std::string& text) {
  std::vector<std::size_t> dims;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto next = text.find('x', pos);
    const auto token = text.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
    if (token.empty() || token.find_first_not_of("0123456789") != std::string::npos) {
      throw ConfigError("malformed shape '" + text + "' (expected e.g. 1x512x128x128)");
    }
    dims.push_back(std::stoull(token));
    if (dims.back() == 0) throw ConfigError("shape '" + text + "' has a zero extent");
    if (next == std::string::npos) break;
    pos = next + 1;
  }
  if (dims.size() != 4) throw ConfigError("shape '" + text + "' must have four extents (BxDxHxW)");
  return {dims[0], dims[1], dims[2], dims[3]};
}

std::string CostShape::str() const {
  return std::to_string(batch) + "x" + std::to_string(channels) + "x" + std::to_string(height) + "x" +
         std::to_string(width);
}

std::uint64_t coord_message_flops(std::uint64_t n, std::uint64_t half, MessageOrder order, bool scale_by_nodes) {
  const std::uint64_t projection_out = 2 * n * half * half;  // (.) W_S
  if (order == MessageOrder::adjacency_first) {
    // delta psi^T: n x half x n, then A upsilon: n x n x half
    return 2 * n * half * n + 2 * n * n * half + projection_out + (scale_by_nodes ? n * n : 0);
  }
  // psi^T upsilon: half x n x half, then delta F: n x half x half
  return 2 * half * n * half + 2 * n * half * half + projection_out + (scale_by_nodes ? half * half : 0);
}

std::uint64_t closed_form_module_params(std::uint64_t channels, std::size_t downsample, ProjectionMode mode) {
  const std::uint64_t d = channels, h = d / 2, q = d / 4;
  const std::uint64_t chain = mode == ProjectionMode::strided_conv ? std::countr_zero(downsample) : 0;
  const std::uint64_t coord = 9 * chain * d + 3 * (d * h + h) + h * h + (h * d + d);
  const std::uint64_t feat = (d * h + h) + 2 * h + d * q + 2 * q + q * q + h * h + (h * d + d) + 2 * d;
  return coord + feat;
}

std::uint64_t closed_form_head_params(const DGCConfig& cfg) {
  const std::uint64_t d = cfg.channels, h = d / 2, q = d / 4, din = cfg.in_channels, c = cfg.classes;
  const std::uint64_t chain = cfg.coord.chain_length();
  std::uint64_t total = (9 * din * d + 2 * d) + (9 * d * d + 2 * d) + (d * c + c);
  if (has_coord(cfg.variant)) total += 9 * chain * d + 3 * (d * h + h) + h * h + (h * d + d);
  if (has_feat(cfg.variant)) total += (d * h + h) + 2 * h + d * q + 2 * q + q * q + h * h + (h * d + d) + 2 * d;
  return total;
}

CostReport count_costs(const DGCConfig& cfg, const CostShape& shape, MessageOrder order) {
  cfg.coord.validate();
  const std::uint64_t b = shape.batch, d = shape.channels, h = d / 2, q = d / 4;
  const std::uint64_t n_pix = static_cast<std::uint64_t>(shape.height) * shape.width;
  const std::size_t rate = cfg.coord.downsample;
  if (d % 4 != 0) throw ConfigError("channel count must be divisible by 4");
  if (shape.height % rate != 0 || shape.width % rate != 0) {
    throw ConfigError("downsample rate " + std::to_string(rate) + " does not divide " + shape.str());
  }
  const std::uint64_t n_nodes = n_pix / (rate * rate);
  const std::uint64_t din = cfg.in_channels, classes = cfg.classes;

  CostReport r;
  r.order = order;
  auto add = [&](std::string name, std::uint64_t params, std::uint64_t flops, std::string tag = "", bool module = true) {
    r.items.push_back({std::move(name), params, b * flops, std::move(tag), module});
  };

  add("head.entry_conv3x3+bn+relu", 9 * din * d + 2 * d, 2 * 9 * n_pix * din * d + 2 * n_pix * d, "", false);

  if (has_coord(cfg.variant)) {
    if (cfg.coord.mode == ProjectionMode::strided_conv) {
      std::uint64_t flops = 0;
      std::size_t gh = shape.height, gw = shape.width;
      for (std::size_t i = 0; i < cfg.coord.chain_length(); ++i) {
        gh = (gh + 1) / 2;
        gw = (gw + 1) / 2;
        flops += 2 * 9 * d * gh * gw;
      }
      add("coord.downsample(strided-conv)", 9 * cfg.coord.chain_length() * d, flops);
    } else {
      add("coord.downsample(avg-pool)", 0, rate == 1 ? 0 : n_nodes * d);
    }
    add("coord.delta+psi+upsilon", 3 * (d * h + h), 3 * 2 * n_nodes * d * h);
    add("coord.message", h * h, coord_message_flops(n_nodes, h, order, cfg.coord.scale_by_nodes), to_string(order));
    add("coord.upsample", 0, rate == 1 ? 0 : n_pix * h);
    add("coord.xi", h * d + d, 2 * n_pix * h * d);
  }
  if (has_feat(cfg.variant)) {
    add("feat.theta+bn+relu", d * h + h + 2 * h, 2 * n_pix * d * h + 2 * n_pix * h);
    add("feat.phi+bn+relu", d * q + 2 * q, 2 * n_pix * d * q + 2 * n_pix * q);
    add("feat.project", 0, 2 * q * n_pix * h);
    add("feat.message", q * q + h * h, q * q + 2 * q * q * h + 2 * q * h * h);
    add("feat.reproject", 0, 2 * n_pix * q * h);
    add("feat.reproj+bn+relu", h * d + d + 2 * d, 2 * n_pix * h * d + 2 * n_pix * d);
  }
  const std::uint64_t summands = 1 + (has_coord(cfg.variant) ? 1 : 0) + (has_feat(cfg.variant) ? 1 : 0);
  add("fuse", 0, (summands - 1) * n_pix * d);

  add("head.exit_conv3x3+bn+relu", 9 * d * d + 2 * d, 2 * 9 * n_pix * d * d + 2 * n_pix * d, "", false);
  add("head.classifier", d * classes + classes, 2 * n_pix * d * classes, "", false);
  return r;
}

template <typename T>
std::uint64_t count_params(const DGCHead<T>& head) {
  return count_trainable(head.parameters());
}

CostReport nonlocal_reference(const CostShape& shape) {
  const std::uint64_t b = shape.batch, d = shape.channels, h = d / 2;
  const std::uint64_t n = static_cast<std::uint64_t>(shape.height) * shape.width;
  CostReport r;
  auto add = [&](std::string name, std::uint64_t params, std::uint64_t flops) {
    r.items.push_back({std::move(name), params, b * flops, "", true});
  };
  add("nonlocal.query+key+value", 3 * (d * h + h), 3 * 2 * n * d * h);
  add("nonlocal.affinity", 0, 2 * n * h * n);
  add("nonlocal.softmax", 0, n * n);
  add("nonlocal.aggregate", 0, 2 * n * n * h);
  add("nonlocal.out+bn", h * d + d + 2 * d, 2 * n * h * d + n * d);
  add("nonlocal.residual", 0, n * d);
  return r;
}

std::string render_table(const CostReport& report, bool csv) {
  std::ostringstream os;
  if (csv) {
    os << "submodule,params,flops,order\n";
    for (const auto& it : report.items) os << it.submodule << ',' << it.params << ',' << it.flops << ',' << it.order << '\n';
    os << "total(module-only)," << report.module_params() << ',' << report.module_flops() << ','
       << to_string(report.order) << '\n';
    os << "total(with-head)," << report.total_params() << ',' << report.total_flops() << ','
       << to_string(report.order) << '\n';
    return os.str();
  }
  os << std::left << std::setw(34) << "submodule" << std::right << std::setw(14) << "params" << std::setw(18) << "FLOPs"
     << "  order\n";
  for (const auto& it : report.items) {
    os << std::left << std::setw(34) << it.submodule << std::right << std::setw(14) << it.params << std::setw(18)
       << it.flops << "  " << it.order << '\n';
  }
  os << std::left << std::setw(34) << "total (module only)" << std::right << std::setw(14) << report.module_params()
     << std::setw(18) << report.module_flops() << "  " << to_string(report.order) << '\n';
  os << std::left << std::setw(34) << "total (with head)" << std::right << std::setw(14) << report.total_params()
     << std::setw(18) << report.total_flops() << "  " << to_string(report.order) << '\n';
  return os.str();
}

template std::uint64_t count_params(const DGCHead<float>&);
template std::uint64_t count_params(const DGCHead<double>&);

}  // namespace dgcn
