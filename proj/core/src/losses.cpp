#include "dgcn/losses.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

namespace dgcn {

namespace {

template <typename T>
void check_logits(const Tensor<T>& logits, const LabelMap& labels) {
  if (logits.ndim() != 3 || logits.dim(1) != labels.height || logits.dim(2) != labels.width) {
    throw ShapeError("logits " + shape_string(logits.shape()) + " do not match a " + std::to_string(labels.height) +
                     "x" + std::to_string(labels.width) + " label map");
  }
  const std::size_t classes = logits.dim(0);
  for (auto l : labels.labels) {
    if (l != kIgnoreLabel && l >= classes) {
      throw std::invalid_argument("label " + std::to_string(l) + " out of range for " + std::to_string(classes) +
                                  " classes");
    }
  }
}

// Softmax probabilities [C x N] and per-pixel losses.
template <typename T>
void softmax_and_loss(const Tensor<T>& logits, const LabelMap& labels, std::vector<T>& probs, std::vector<T>& losses) {
  const std::size_t c = logits.dim(0), n = labels.height * labels.width;
  auto z = logits.data();
  probs.assign(c * n, T(0));
  losses.assign(n, T(0));
  for (std::size_t i = 0; i < n; ++i) {
    T top = z[i];
    for (std::size_t k = 1; k < c; ++k) top = std::max(top, z[k * n + i]);
    T total = 0;
    for (std::size_t k = 0; k < c; ++k) {
      probs[k * n + i] = std::exp(z[k * n + i] - top);
      total += probs[k * n + i];
    }
    for (std::size_t k = 0; k < c; ++k) probs[k * n + i] /= total;
    const auto label = labels.labels[i];
    if (label != kIgnoreLabel) losses[i] = -(z[label * n + i] - top - std::log(total));
  }
}

// Mean loss over `selected` pixels (summed in pixel order) with gradient (p - onehot) / count.
template <typename T>
Tensor<T> masked_mean_loss(const Tensor<T>& logits, const LabelMap& labels, std::vector<T> probs,
                           const std::vector<T>& losses, std::vector<char> selected, const char* name) {
  const std::size_t n = labels.height * labels.width;
  std::size_t count = 0;
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!selected[i]) continue;
    total += losses[i];
    ++count;
  }
  if (count == 0) throw std::invalid_argument(std::string(name) + ": no labelled pixels");
  const T inv = T(1) / static_cast<T>(count);
  auto state = std::make_shared<std::pair<std::vector<T>, std::vector<char>>>(std::move(probs), std::move(selected));
  auto label_copy = std::make_shared<std::vector<std::uint8_t>>(labels.labels);
  const std::size_t c = logits.dim(0);
  return detail::make_result<T>(
      {}, {total * inv}, {logits},
      [state, label_copy, inv, c, n](detail::Node<T>& self) {
        auto g = self.inputs[0]->grad_buffer();
        const T up = self.grad[0] * inv;
        const auto& [p, sel] = *state;
        for (std::size_t i = 0; i < n; ++i) {
          if (!sel[i]) continue;
          const auto label = (*label_copy)[i];
          for (std::size_t k = 0; k < c; ++k) g[k * n + i] += up * (p[k * n + i] - (k == label ? T(1) : T(0)));
        }
      },
      name);
}

}  // namespace

template <typename T>
std::vector<T> per_pixel_cross_entropy(const Tensor<T>& logits, const LabelMap& labels) {
  check_logits(logits, labels);
  std::vector<T> probs, losses;
  softmax_and_loss(logits, labels, probs, losses);
  return losses;
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const LabelMap& labels) {
  check_logits(logits, labels);
  std::vector<T> probs, losses;
  softmax_and_loss(logits, labels, probs, losses);
  std::vector<char> selected(losses.size());
  for (std::size_t i = 0; i < selected.size(); ++i) selected[i] = labels.labels[i] != kIgnoreLabel;
  return masked_mean_loss(logits, labels, std::move(probs), losses, std::move(selected), "cross_entropy");
}

template <typename T>
Tensor<T> ohem_loss(const Tensor<T>& logits, const LabelMap& labels, std::size_t k) {
  if (k == 0) throw std::invalid_argument("ohem_loss: K must be at least 1");
  check_logits(logits, labels);
  std::vector<T> probs, losses;
  softmax_and_loss(logits, labels, probs, losses);
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    if (labels.labels[i] != kIgnoreLabel) order.push_back(i);
  }
  std::vector<char> selected(losses.size(), 0);
  if (k >= order.size()) {
    for (auto i : order) selected[i] = 1;
  } else {
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) { return losses[a] > losses[b] || (losses[a] == losses[b] && a < b); });
    for (std::size_t j = 0; j < k; ++j) selected[order[j]] = 1;
  }
  return masked_mean_loss(logits, labels, std::move(probs), losses, std::move(selected), "ohem_loss");
}

template <typename T>
Tensor<T> softmax_classes(const Tensor<T>& logits) {
  if (logits.ndim() != 3) throw ShapeError("softmax_classes: expected [C x H x W]");
  const std::size_t c = logits.dim(0), n = logits.dim(1) * logits.dim(2);
  auto z = logits.data();
  std::vector<T> out(c * n);
  for (std::size_t i = 0; i < n; ++i) {
    T top = z[i];
    for (std::size_t k = 1; k < c; ++k) top = std::max(top, z[k * n + i]);
    T total = 0;
    for (std::size_t k = 0; k < c; ++k) total += out[k * n + i] = std::exp(z[k * n + i] - top);
    for (std::size_t k = 0; k < c; ++k) out[k * n + i] /= total;
  }
  return Tensor<T>::from(logits.shape(), std::move(out));
}

template <typename T>
LabelMap argmax_classes(const Tensor<T>& logits) {
  if (logits.ndim() != 3) throw ShapeError("argmax_classes: expected [C x H x W]");
  const std::size_t c = logits.dim(0), h = logits.dim(1), w = logits.dim(2), n = h * w;
  auto z = logits.data();
  LabelMap out{h, w, std::vector<std::uint8_t>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k) {
      if (z[k * n + i] > z[best * n + i]) best = k;
    }
    out.labels[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

#define DGCN_INSTANTIATE_LOSSES(T)                                                          \
  template std::vector<T> per_pixel_cross_entropy(const Tensor<T>&, const LabelMap&);       \
  template Tensor<T> cross_entropy(const Tensor<T>&, const LabelMap&);                      \
  template Tensor<T> ohem_loss(const Tensor<T>&, const LabelMap&, std::size_t);             \
  template Tensor<T> softmax_classes(const Tensor<T>&);                                     \
  template LabelMap argmax_classes(const Tensor<T>&);

DGCN_INSTANTIATE_LOSSES(float)
DGCN_INSTANTIATE_LOSSES(double)

}  // namespace dgcn
