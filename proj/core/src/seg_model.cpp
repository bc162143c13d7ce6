#include "dgcn/seg_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "dgcn/losses.hpp"

namespace dgcn {

template <typename T>
Backbone<T> Backbone<T>::init(std::size_t in_channels, std::size_t width, std::size_t layers, Rng& rng) {
  if (layers == 0) throw ConfigError("backbone needs at least one layer");
  Backbone b;
  for (std::size_t i = 0; i < layers; ++i) {
    auto layer_rng = rng.fork(i);
    b.convs.push_back(Conv3x3Params<T>::init(i == 0 ? in_channels : width, width, false, layer_rng));
    b.bns.push_back(BatchNormParams<T>::init(width));
  }
  return b;
}

template <typename T>
void Backbone<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < convs.size(); ++i) {
    convs[i].collect(out, prefix + ".conv" + std::to_string(i));
    bns[i].collect(out, prefix + ".bn" + std::to_string(i));
  }
}

template <typename T>
Tensor<T> Backbone<T>::forward(const Tensor<T>& image, bool training) {
  Tensor<T> x = image;
  for (std::size_t i = 0; i < convs.size(); ++i) x = relu(batchnorm(conv3x3(x, convs[i]), bns[i], training));
  return x;
}

template <typename T>
SegModel<T> SegModel<T>::init(const SegModelConfig& cfg, Rng& rng) {
  const Rng base(rng.next_u64());
  auto backbone_rng = base.fork(1), head_rng = base.fork(2);
  SegModel m;
  m.config = cfg;
  m.backbone = Backbone<T>::init(cfg.image_channels, cfg.head.in_channels, cfg.backbone_layers, backbone_rng);
  m.head = init_head<T>(cfg.head, head_rng);
  return m;
}

template <typename T>
ParamList<T> SegModel<T>::parameters() const {
  ParamList<T> out;
  backbone.collect(out, "backbone");
  auto head_params = head.parameters("head");
  out.insert(out.end(), head_params.begin(), head_params.end());
  return out;
}

template <typename T>
Tensor<T> SegModel<T>::forward(const Tensor<T>& image, bool training) {
  return head_forward(backbone.forward(image, training), head, training);
}

template <typename T>
Tensor<T> image_as(const Tensor<float>& image) {
  if constexpr (std::is_same_v<T, float>) {
    return image;
  } else {
    std::vector<T> values(image.data().begin(), image.data().end());
    return Tensor<T>::from(image.shape(), std::move(values));
  }
}

std::size_t scaled_extent(std::size_t extent, double scale, std::size_t rate) {
  if (!(scale > 0)) throw ConfigError("scales must be positive");
  const double target = scale * static_cast<double>(extent) / static_cast<double>(rate);
  const auto blocks = static_cast<std::size_t>(std::llround(target));
  if (blocks == 0) {
    throw ConfigError("scale " + std::to_string(scale) + " shrinks extent " + std::to_string(extent) +
                      " below the downsample rate " + std::to_string(rate));
  }
  return blocks * rate;
}

template <typename T>
Tensor<T> multi_scale_infer(SegModel<T>& model, const Tensor<T>& image, const std::vector<double>& scales) {
  if (scales.empty()) throw ConfigError("multi-scale inference needs at least one scale");
  NoGradGuard no_grad;
  const std::size_t h = image.dim(1), w = image.dim(2), rate = model.config.head.coord.downsample;
  std::vector<T> avg;
  for (double s : scales) {
    const std::size_t sh = scaled_extent(h, s, rate), sw = scaled_extent(w, s, rate);
    auto scaled = (sh == h && sw == w) ? image : nearest_resize(image, sh, sw);
    auto probs = softmax_classes(model.forward(scaled, false));
    if (sh != h || sw != w) probs = nearest_resize(probs, h, w);
    if (avg.empty()) avg.assign(probs.numel(), T(0));
    auto p = probs.data();
    for (std::size_t i = 0; i < avg.size(); ++i) avg[i] += p[i];
  }
  const T inv = T(1) / static_cast<T>(scales.size());
  // An underflowed probability would give -inf; the smallest normal keeps it finite.
  for (auto& v : avg) v = std::log(std::max(v * inv, std::numeric_limits<T>::min()));
  return Tensor<T>::from({model.config.head.classes, h, w}, std::move(avg));
}

template <typename T>
LabelMap predict(SegModel<T>& model, const Tensor<float>& image, const std::vector<double>& scales) {
  NoGradGuard no_grad;
  auto input = image_as<T>(image);
  return argmax_classes(scales.empty() ? model.forward(input, false) : multi_scale_infer(model, input, scales));
}

template <typename T>
IoUResult evaluate(SegModel<T>& model, const std::vector<ToySample>& samples, const std::vector<double>& scales) {
  IoUAccumulator acc(model.config.head.classes);
  for (const auto& s : samples) acc.add(predict(model, s.image, scales), s.labels);
  return acc.result();
}

#define DGCN_INSTANTIATE_SEG(T)                                                                          \
  template struct Backbone<T>;                                                                           \
  template struct SegModel<T>;                                                                           \
  template Tensor<T> image_as(const Tensor<float>&);                                                     \
  template Tensor<T> multi_scale_infer(SegModel<T>&, const Tensor<T>&, const std::vector<double>&);      \
  template LabelMap predict(SegModel<T>&, const Tensor<float>&, const std::vector<double>&);             \
  template IoUResult evaluate(SegModel<T>&, const std::vector<ToySample>&, const std::vector<double>&);

DGCN_INSTANTIATE_SEG(float)
DGCN_INSTANTIATE_SEG(double)

}  // namespace dgcn
