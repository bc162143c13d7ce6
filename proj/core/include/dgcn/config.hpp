#pragma once

// Plain key=value run configuration. Blank lines and lines starting with '#' are
// skipped; every other line must be `key=value` with a known key.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dgcn/seg_model.hpp"
#include "dgcn/train.hpp"

namespace dgcn {

struct RunConfig {
  DType dtype = DType::f32;

  // model
  std::size_t backbone_width = 16;
  std::size_t backbone_layers = 4;
  std::size_t channels = 64;
  std::size_t classes = 5;
  std::size_t downsample = 8;
  ProjectionMode projection = ProjectionMode::avg_pool;
  MessageOrder order = MessageOrder::factor_first;
  bool scale_by_nodes = false;
  Variant variant = Variant::both;

  // data
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t samples = 500;
  std::uint64_t data_seed = 7;

  TrainConfig train;
  std::vector<double> scales{1.0};

  SegModelConfig model_config() const;
  ToyTaskShape task_shape() const;
  void validate() const;

  bool operator==(const RunConfig&) const;
};

bool operator==(const TrainConfig& a, const TrainConfig& b);

/// Toy-task defaults: 64x64, C=5, D=64, d=8, 4-layer backbone.
RunConfig default_toy_config();
/// Gradient-check defaults: f64, D=8, H=W=16, d=4, C=3, strided projection (so the depthwise chain is checked too).
RunConfig default_gradcheck_config();

std::string render_config(const RunConfig& cfg);
/// Applies key=value lines on top of `base`. Throws ConfigError carrying the 1-based line number.
RunConfig parse_config(const std::string& text, RunConfig base = default_toy_config());
RunConfig load_config(const std::filesystem::path& path, RunConfig base = default_toy_config());
/// Applies a single key=value assignment (command-line overrides).
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);

std::vector<double> parse_scales(const std::string& text);

}  // namespace dgcn
