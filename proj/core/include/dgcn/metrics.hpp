#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "dgcn/toy_data.hpp"

namespace dgcn {

struct IoUResult {
  double mean = 0;
  /// Per-class IoU; nullopt for classes absent from both predictions and labels.
  std::vector<std::optional<double>> per_class;
};

/// Accumulates per-class intersections and unions across a dataset.
class IoUAccumulator {
 public:
  explicit IoUAccumulator(std::size_t classes);

  /// Pixels labelled kIgnoreLabel are skipped. Throws on a size mismatch or an out-of-range id.
  void add(const LabelMap& preds, const LabelMap& labels);
  IoUResult result() const;

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> intersection_;
  std::vector<std::uint64_t> union_;
};

IoUResult mean_iou(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& labels, std::size_t classes);

}  // namespace dgcn
