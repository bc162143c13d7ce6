#include "dgcn/head.hpp"

namespace dgcn {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::baseline: return "baseline";
    case Variant::coord: return "coord";
    case Variant::feat: return "feat";
    case Variant::both: return "both";
  }
  return "both";
}

Variant variant_from_string(const std::string& s) {
  if (s == "baseline") return Variant::baseline;
  if (s == "coord") return Variant::coord;
  if (s == "feat") return Variant::feat;
  if (s == "both") return Variant::both;
  throw ConfigError("unknown variant '" + s + "' (expected baseline, coord, feat or both)");
}

bool has_coord(Variant v) { return v == Variant::coord || v == Variant::both; }
bool has_feat(Variant v) { return v == Variant::feat || v == Variant::both; }

void DGCConfig::validate() const {
  if (in_channels == 0) throw ConfigError("in_channels must be positive");
  if (channels == 0 || channels % 4 != 0) throw ConfigError("channels must be a positive multiple of 4");
  if (classes == 0) throw ConfigError("classes must be positive");
  coord.validate();
}

template <typename T>
ParamList<T> DGCHead<T>::parameters(const std::string& prefix) const {
  ParamList<T> out;
  entry.collect(out, prefix + ".entry");
  entry_bn.collect(out, prefix + ".entry_bn");
  if (coord) coord->collect(out, prefix + ".coord");
  if (feat) feat->collect(out, prefix + ".feat");
  exit.collect(out, prefix + ".exit");
  exit_bn.collect(out, prefix + ".exit_bn");
  classifier.collect(out, prefix + ".classifier");
  return out;
}

template <typename T>
Tensor<T> fuse(const Tensor<T>& x, const Tensor<T>& xs, const Tensor<T>& xf) {
  return add(add(x, xs), xf);
}

template <typename T>
Tensor<T> module_forward(const Tensor<T>& x, DGCHead<T>& head, bool training) {
  if (head.coord && head.feat) {
    auto xs = coord_gcn_forward(x, head.config.coord, *head.coord);
    return fuse(x, xs, feature_gcn_forward(x, *head.feat, training));
  }
  if (head.coord) return add(x, coord_gcn_forward(x, head.config.coord, *head.coord));
  if (head.feat) return add(x, feature_gcn_forward(x, *head.feat, training));
  return x;
}

template <typename T>
Tensor<T> head_forward(const Tensor<T>& features, DGCHead<T>& head, bool training) {
  auto x = relu(batchnorm(conv3x3(features, head.entry), head.entry_bn, training));
  auto refined = module_forward(x, head, training);
  auto y = relu(batchnorm(conv3x3(refined, head.exit), head.exit_bn, training));
  return conv1x1(y, head.classifier);
}

template <typename T>
DGCHead<T> init_head(const DGCConfig& cfg, Rng& rng) {
  cfg.validate();
  DGCHead<T> head;
  head.config = cfg;
  // Each submodule draws from its own stream so enabling a branch leaves the others unchanged.
  const Rng base(rng.next_u64());
  auto entry_rng = base.fork(1), coord_rng = base.fork(2), feat_rng = base.fork(3), exit_rng = base.fork(4),
       cls_rng = base.fork(5);
  head.entry = Conv3x3Params<T>::init(cfg.in_channels, cfg.channels, false, entry_rng);
  head.entry_bn = BatchNormParams<T>::init(cfg.channels);
  if (has_coord(cfg.variant)) head.coord = CoordGCNParams<T>::init(cfg.channels, cfg.coord, coord_rng);
  if (has_feat(cfg.variant)) head.feat = FeatureGCNParams<T>::init(cfg.channels, feat_rng);
  head.exit = Conv3x3Params<T>::init(cfg.channels, cfg.channels, false, exit_rng);
  head.exit_bn = BatchNormParams<T>::init(cfg.channels);
  head.classifier = Conv1x1Params<T>::init(cfg.channels, cfg.classes, true, cls_rng);
  return head;
}

#define DGCN_INSTANTIATE_HEAD(T)                                                   \
  template struct DGCHead<T>;                                                      \
  template Tensor<T> fuse(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);   \
  template Tensor<T> module_forward(const Tensor<T>&, DGCHead<T>&, bool);          \
  template Tensor<T> head_forward(const Tensor<T>&, DGCHead<T>&, bool);            \
  template DGCHead<T> init_head(const DGCConfig&, Rng&);

DGCN_INSTANTIATE_HEAD(float)
DGCN_INSTANTIATE_HEAD(double)

}  // namespace dgcn
