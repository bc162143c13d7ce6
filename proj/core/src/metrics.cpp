#include "dgcn/metrics.hpp"

#include <stdexcept>
#include <string>

namespace dgcn {

IoUAccumulator::IoUAccumulator(std::size_t classes)
    : classes_(classes), intersection_(classes, 0), union_(classes, 0) {}

void IoUAccumulator::add(const LabelMap& preds, const LabelMap& labels) {
  if (preds.labels.size() != labels.labels.size()) throw std::invalid_argument("mean_iou: prediction/label size mismatch");
  for (std::size_t i = 0; i < labels.labels.size(); ++i) {
    const auto truth = labels.labels[i];
    if (truth == kIgnoreLabel) continue;
    const auto pred = preds.labels[i];
    if (truth >= classes_ || pred >= classes_) {
      throw std::invalid_argument("mean_iou: class id out of range at pixel " + std::to_string(i));
    }
    if (pred == truth) {
      ++intersection_[truth];
      ++union_[truth];
    } else {
      ++union_[truth];
      ++union_[pred];
    }
  }
}

IoUResult IoUAccumulator::result() const {
  IoUResult r;
  r.per_class.resize(classes_);
  double total = 0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < classes_; ++c) {
    if (union_[c] == 0) continue;
    const double iou = static_cast<double>(intersection_[c]) / static_cast<double>(union_[c]);
    r.per_class[c] = iou;
    total += iou;
    ++present;
  }
  r.mean = present ? total / static_cast<double>(present) : 0.0;
  return r;
}

IoUResult mean_iou(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& labels, std::size_t classes) {
  if (preds.size() != labels.size()) throw std::invalid_argument("mean_iou: prediction/label count mismatch");
  IoUAccumulator acc(classes);
  for (std::size_t i = 0; i < preds.size(); ++i) acc.add(preds[i], labels[i]);
  return acc.result();
}

}  // namespace dgcn
