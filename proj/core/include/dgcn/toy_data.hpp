#pragma once

// Synthetic segmentation task that needs long-range context. Each image holds one
// coloured "beacon" patch and 2-4 small target squares painted in the same neutral
// colour; the class of every target square is decided by the beacon colour, which is
// at least H/2 pixels away (L-infinity, centroid to centroid). A receptive field smaller
// than that cannot tell the target classes apart.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dgcn/tensor.hpp"

namespace dgcn {

inline constexpr std::uint8_t kIgnoreLabel = 255;
inline constexpr std::uint8_t kBackgroundClass = 0;
inline constexpr std::uint8_t kBeaconClass = 1;

struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> labels;  // row-major class ids, kIgnoreLabel excluded from losses/metrics

  std::uint8_t at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }
  bool operator==(const LabelMap&) const = default;
};

struct Square {
  std::size_t y = 0, x = 0, size = 0;  // top-left corner and side
  double cy() const { return static_cast<double>(y) + (static_cast<double>(size) - 1) / 2; }
  double cx() const { return static_cast<double>(x) + (static_cast<double>(size) - 1) / 2; }
};

struct ToySample {
  Tensor<float> image;  // [3 x H x W], values in [0, 1]
  LabelMap labels;
  std::uint64_t seed = 0;
  Square beacon;
  std::vector<Square> targets;
  std::size_t beacon_colour = 0;  // index into the palette; target class = 2 + index
};

struct ToyTaskShape {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t classes = 5;

  void validate() const;
  std::size_t target_kinds() const { return classes - 2; }
};

/// RGB colour of beacon kind k out of `kinds` (evenly spaced hues).
std::vector<float> beacon_palette_colour(std::size_t k, std::size_t kinds);

/// One sample, a pure function of (seed, shape).
ToySample gen_toy_sample(std::uint64_t seed, const ToyTaskShape& shape);

/// Per-sample seed for sample `index` of a dataset generated from `seed`.
std::uint64_t sample_seed(std::uint64_t seed, std::size_t index);

/// `count` samples; sample i uses sample_seed(seed, i), so output does not depend on `threads`.
std::vector<ToySample> gen_toy_dataset(std::uint64_t seed, std::size_t count, const ToyTaskShape& shape,
                                       std::size_t threads = 1);

/// The last 20% of samples (at least one) form the validation split.
std::size_t validation_start(std::size_t count);

/// Dataset cache: one TNSR file per sample (image record then label record) plus manifest.txt.
void save_dataset(const std::filesystem::path& dir, const std::vector<ToySample>& samples, std::uint64_t seed,
                  const ToyTaskShape& shape);

struct LoadedDataset {
  std::vector<ToySample> samples;
  std::uint64_t seed = 0;
  ToyTaskShape shape;
};

/// Throws FormatError for a missing manifest or a corrupt sample file.
LoadedDataset load_dataset(const std::filesystem::path& dir);

}  // namespace dgcn
