#pragma once

#include <cstddef>
#include <vector>

#include "dgcn/tensor.hpp"
#include "dgcn/toy_data.hpp"

namespace dgcn {

/// Negative log-softmax of the true class at every pixel; ignored pixels hold 0.
template <typename T>
std::vector<T> per_pixel_cross_entropy(const Tensor<T>& logits, const LabelMap& labels);

/// Mean per-pixel cross entropy over pixels whose label is not kIgnoreLabel.
/// Throws std::invalid_argument if every pixel is ignored.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const LabelMap& labels);

/// Mean cross entropy over the K highest-loss pixels (ties broken by ascending pixel index).
/// K larger than the number of labelled pixels selects them all.
template <typename T>
Tensor<T> ohem_loss(const Tensor<T>& logits, const LabelMap& labels, std::size_t k);

/// Per-pixel softmax over the class axis, no gradient.
template <typename T>
Tensor<T> softmax_classes(const Tensor<T>& logits);

/// Per-pixel argmax over the class axis (lowest class id wins ties).
template <typename T>
LabelMap argmax_classes(const Tensor<T>& logits);

}  // namespace dgcn
