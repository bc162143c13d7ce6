#include "dgcn/feature_gcn.hpp"

namespace dgcn {

namespace {
template <typename T>
Tensor<T> pixel_rows(const Tensor<T>& map) {
  return transpose(reshape(map, {map.dim(0), map.dim(1) * map.dim(2)}));
}
}  // namespace

template <typename T>
FeatureGCNParams<T> FeatureGCNParams<T>::init(std::size_t channels, Rng& rng) {
  if (channels < 4 || channels % 4 != 0) throw ConfigError("feature branch needs a channel count divisible by 4");
  const std::size_t d1 = channels / 2, d2 = channels / 4;
  FeatureGCNParams p;
  p.theta = Conv1x1Params<T>::init(channels, d1, true, rng);
  p.theta_bn = BatchNormParams<T>::init(d1);
  p.phi = Conv1x1Params<T>::init(channels, d2, false, rng);
  p.phi_bn = BatchNormParams<T>::init(d2);
  p.a_f = randn<T>({d2, d2}, rng, 0.01, true);
  p.w_f = randn<T>({d1, d1}, rng, 0.01, true);
  p.reproj = Conv1x1Params<T>::init(d1, channels, true, rng);
  p.reproj_bn = BatchNormParams<T>::init(channels);
  return p;
}

template <typename T>
void FeatureGCNParams<T>::collect(ParamList<T>& out, const std::string& prefix) const {
  theta.collect(out, prefix + ".theta");
  theta_bn.collect(out, prefix + ".theta_bn");
  phi.collect(out, prefix + ".phi");
  phi_bn.collect(out, prefix + ".phi_bn");
  out.push_back({prefix + ".a_f", a_f, true});
  out.push_back({prefix + ".w_f", w_f, true});
  reproj.collect(out, prefix + ".reproj");
  reproj_bn.collect(out, prefix + ".reproj_bn");
}

template <typename T>
Tensor<T> aggregate_nodes(const Tensor<T>& p_map, const Tensor<T>& theta_map) {
  if (p_map.ndim() != 3 || theta_map.ndim() != 3 || p_map.dim(1) != theta_map.dim(1) ||
      p_map.dim(2) != theta_map.dim(2)) {
    throw ShapeError("aggregate_nodes: maps " + shape_string(p_map.shape()) + " and " +
                     shape_string(theta_map.shape()) + " are not on the same grid");
  }
  const std::size_t n = p_map.dim(1) * p_map.dim(2);
  // [D2 x N] . [N x D1]
  return matmul(reshape(p_map, {p_map.dim(0), n}), pixel_rows(theta_map));
}

template <typename T>
FeatureProjection<T> project_feature(const Tensor<T>& x, FeatureGCNParams<T>& params, bool training) {
  auto theta_map = relu(batchnorm(conv1x1(x, params.theta), params.theta_bn, training));
  auto phi_raw = conv1x1(x, params.phi);
  auto phi_map = relu(batchnorm(phi_raw, params.phi_bn, training));
  return {pixel_rows(phi_raw), aggregate_nodes(phi_map, theta_map)};
}

template <typename T>
Tensor<T> feature_message(const Tensor<T>& nodes, const Tensor<T>& a_f, const Tensor<T>& w_f) {
  if (a_f.ndim() != 2 || a_f.dim(0) != a_f.dim(1)) throw ShapeError("feature_message: A_F must be square");
  auto laplacian = sub(Tensor<T>::eye(a_f.dim(0)), a_f);
  return matmul(matmul(laplacian, nodes), w_f);
}

template <typename T>
Tensor<T> reproject_feature(const Tensor<T>& projection, const Tensor<T>& message, const FeatureGCNParams<T>& params,
                            std::size_t h, std::size_t w) {
  if (projection.ndim() != 2 || projection.dim(0) != h * w) {
    throw ShapeError("reproject_feature: projection " + shape_string(projection.shape()) + " does not cover " +
                     std::to_string(h) + "x" + std::to_string(w) + " pixels");
  }
  auto pixels = matmul(projection, message);  // [N x D1]
  return conv1x1(reshape(transpose(pixels), {message.dim(1), h, w}), params.reproj);
}

template <typename T>
Tensor<T> feature_gcn_forward(const Tensor<T>& x, FeatureGCNParams<T>& params, bool training) {
  auto [projection, nodes] = project_feature(x, params, training);
  auto message = feature_message(nodes, params.a_f, params.w_f);
  auto out = reproject_feature(projection, message, params, x.dim(1), x.dim(2));
  return relu(batchnorm(out, params.reproj_bn, training));
}

#define DGCN_INSTANTIATE_FEATURE(T)                                                                             \
  template struct FeatureGCNParams<T>;                                                                          \
  template Tensor<T> aggregate_nodes(const Tensor<T>&, const Tensor<T>&);                                      \
  template FeatureProjection<T> project_feature(const Tensor<T>&, FeatureGCNParams<T>&, bool);                 \
  template Tensor<T> feature_message(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> reproject_feature(const Tensor<T>&, const Tensor<T>&, const FeatureGCNParams<T>&,         \
                                       std::size_t, std::size_t);                                              \
  template Tensor<T> feature_gcn_forward(const Tensor<T>&, FeatureGCNParams<T>&, bool);

DGCN_INSTANTIATE_FEATURE(float)
DGCN_INSTANTIATE_FEATURE(double)

}  // namespace dgcn
