#pragma once

#include <doctest.h>

#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "dgcn/ops.hpp"
#include "dgcn/rng.hpp"
#include "dgcn/tensor.hpp"

namespace testsupport {

using dgcn::Tensor;

template <typename T>
std::vector<T> values(const Tensor<T>& t) {
  return {t.data().begin(), t.data().end()};
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  REQUIRE(a.size() == b.size());
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

inline double max_abs_diff(std::span<const float> a, std::span<const float> b) {
  REQUIRE(a.size() == b.size());
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(double(a[i]) - double(b[i])));
  return worst;
}

/// Relative error between backprop and central differences for d loss / d x.
inline double grad_error(const std::function<Tensor<double>()>& loss, Tensor<double> x, double eps = 1e-5) {
  x.zero_grad();
  loss().backward();
  const auto analytic = x.grad();
  auto numeric = dgcn::finite_diff_grad<double>([&](const Tensor<double>&) { return loss().item(); }, x, eps);
  x.zero_grad();
  return dgcn::max_rel_error<double>(analytic, numeric.data(), 1e-8);
}

/// sum(y * R) for fixed random R, so a wrong gradient cannot hide behind a uniform upstream signal.
struct Probe {
  Tensor<double> weights;
  Probe(const dgcn::Shape& shape, std::uint64_t seed) {
    dgcn::Rng rng(seed);
    weights = dgcn::randn<double>(shape, rng);
  }
  Tensor<double> operator()(const Tensor<double>& y) const { return dgcn::sum(dgcn::mul(y, weights)); }
};

}  // namespace testsupport

namespace testsupport {

/// Every recorded node reachable from `root`, plus who consumes each of them.
template <typename T>
struct GraphView {
  Tensor<T> root;  // keeps the graph alive
  std::vector<const dgcn::detail::Node<T>*> nodes;
  std::map<const dgcn::detail::Node<T>*, std::vector<const dgcn::detail::Node<T>*>> consumers;

  explicit GraphView(Tensor<T> result) : root(std::move(result)) {
    std::set<const dgcn::detail::Node<T>*> seen;
    std::vector<const dgcn::detail::Node<T>*> stack{root.node().get()};
    while (!stack.empty()) {
      auto* n = stack.back();
      stack.pop_back();
      if (!seen.insert(n).second) continue;
      nodes.push_back(n);
      for (const auto& in : n->inputs) {
        consumers[in.get()].push_back(n);
        stack.push_back(in.get());
      }
    }
  }

  std::size_t count(const std::string& op) const {
    std::size_t k = 0;
    for (auto* n : nodes) k += n->op && op == n->op;
    return k;
  }

  bool consumed_by(const dgcn::detail::Node<T>* n, const std::string& op) const {
    auto it = consumers.find(n);
    if (it == consumers.end()) return false;
    return consumer(n, op) != nullptr;
  }

  const dgcn::detail::Node<T>* consumer(const dgcn::detail::Node<T>* n, const std::string& op) const {
    auto it = consumers.find(n);
    if (it == consumers.end()) return nullptr;
    for (auto* c : it->second)
      if (c->op && op == c->op) return c;
    return nullptr;
  }
};

}  // namespace testsupport
