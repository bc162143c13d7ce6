#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "support.hpp"

#include <limits>

using namespace dgcn;
using testsupport::grad_error;
using testsupport::Probe;
using testsupport::values;

namespace {

std::vector<double> naive_matmul(const Tensor<double>& a, const Tensor<double>& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * n + j] += a.at({i, p}) * b.at({p, j});
  return c;
}

}  // namespace

TEST_CASE("tensor construction validates shape and values") {
  auto t = Tensor<float>::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.at({1, 2}) == 6.0f);
  CHECK(t.dtype() == DType::f32);
  CHECK(Tensor<double>::zeros({2}).dtype() == DType::f64);
  CHECK_THROWS_AS(Tensor<float>::from({2, 2}, {1, 2, 3}), ShapeError);
  CHECK_THROWS_AS(Tensor<float>::zeros({2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor<double>::from({1}, {std::numeric_limits<double>::quiet_NaN()}), NumericError);
  CHECK_THROWS_AS(Tensor<double>::from({1}, {std::numeric_limits<double>::infinity()}), NumericError);
}

TEST_CASE("ops reject results that overflow to infinity") {
  auto x = Tensor<float>::full({3}, 3e38f);
  CHECK_THROWS_AS(scale(x, 10.0f), NumericError);
  CHECK_THROWS_AS(add(x, x), NumericError);
}

TEST_CASE("matmul") {
  Rng rng(3);
  SUBCASE("identity") {
    auto b = randn<double>({3, 2}, rng);
    CHECK(values(matmul(Tensor<double>::eye(3), b)) == values(b));
  }
  SUBCASE("hand example") {
    auto a = Tensor<double>::from({2, 2}, {1, 2, 3, 4});
    auto b = Tensor<double>::from({2, 1}, {0, 1});
    CHECK(values(matmul(a, b)) == std::vector<double>{2, 4});
  }
  SUBCASE("random case against a triple loop") {
    auto a = randn<double>({5, 4}, rng);
    auto b = randn<double>({4, 3}, rng);
    const auto c = matmul(a, b);
    CHECK(testsupport::max_abs_diff(c.data(), naive_matmul(a, b)) < 1e-12);
  }
  SUBCASE("shape mismatch") {
    CHECK_THROWS_AS(matmul(Tensor<double>::zeros({2, 3}), Tensor<double>::zeros({2, 3})), ShapeError);
    CHECK_THROWS_AS(matmul(Tensor<double>::zeros({2, 3, 1}), Tensor<double>::zeros({3, 3})), ShapeError);
  }
}

TEST_CASE("matmul is associative to round-off in f64") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    auto a = randn<double>({8, 8}, rng), b = randn<double>({8, 8}, rng), c = randn<double>({8, 8}, rng);
    auto left = matmul(matmul(a, b), c), right = matmul(a, matmul(b, c));
    double scale_ = 0;
    for (double v : left.data()) scale_ = std::max(scale_, std::abs(v));
    CHECK(testsupport::max_abs_diff(left.data(), right.data()) < 1e-10 * scale_);
  }
}

TEST_CASE("elementwise ops") {
  auto x = Tensor<double>::from({3}, {-1, 0, 2});
  CHECK(values(relu(x)) == std::vector<double>{0, 0, 2});
  CHECK(values(add(x, Tensor<double>::zeros({3}))) == values(x));
  CHECK(values(sub(x, x)) == std::vector<double>{0, 0, 0});
  CHECK(values(mul(x, x)) == std::vector<double>{1, 0, 4});
  CHECK(values(scale(x, 0.5)) == std::vector<double>{-0.5, 0, 1});
  CHECK_THROWS_AS(add(x, Tensor<double>::zeros({1, 3})), ShapeError);
  CHECK_THROWS_AS(mul(x, Tensor<double>::zeros({4})), ShapeError);
}

TEST_CASE("relu subgradient at zero is zero") {
  auto x = Tensor<double>::from({3}, {-1, 0, 2}, true);
  sum(relu(x)).backward();
  CHECK(x.grad() == std::vector<double>{0, 0, 1});
}

TEST_CASE("transpose and reshape") {
  Rng rng(5);
  auto a = randn<double>({3, 4}, rng);
  CHECK(values(transpose(transpose(a))) == values(a));
  CHECK(transpose(a).at({2, 1}) == a.at({1, 2}));
  auto r = reshape(Tensor<double>::from({1, 6}, {1, 2, 3, 4, 5, 6}), {2, 3});
  CHECK(r.at({1, 0}) == 4.0);
  CHECK_THROWS_AS(reshape(a, {5, 2}), ShapeError);
}

TEST_CASE("backward basics") {
  auto x = Tensor<double>::from({3}, {1, -2, 3}, true);
  SUBCASE("sum gives ones") {
    sum(x).backward();
    CHECK(x.grad() == std::vector<double>{1, 1, 1});
  }
  SUBCASE("half squared norm gives x") {
    scale(sum(mul(x, x)), 0.5).backward();
    CHECK(x.grad() == std::vector<double>{1, -2, 3});
  }
  SUBCASE("repeated backward accumulates until zeroed") {
    auto loss = sum(x);
    loss.backward();
    loss.backward();
    CHECK(x.grad() == std::vector<double>{2, 2, 2});
    x.zero_grad();
    loss.backward();
    CHECK(x.grad() == std::vector<double>{1, 1, 1});
  }
  SUBCASE("shared subexpressions sum their contributions") {
    auto y = mul(x, x);
    sum(add(y, y)).backward();
    CHECK(x.grad() == std::vector<double>{4, -8, 12});
  }
  SUBCASE("non-scalar loss is rejected") { CHECK_THROWS_AS(x.backward(), ShapeError); }
  SUBCASE("no graph is recorded under NoGradGuard") {
    NoGradGuard guard;
    auto y = sum(x);
    CHECK_FALSE(y.requires_grad());
  }
}

TEST_CASE("detach cuts the graph") {
  auto x = Tensor<double>::from({2}, {1, 2}, true);
  auto y = mul(x, x).detach();
  CHECK_FALSE(y.requires_grad());
  CHECK(values(y) == std::vector<double>{1, 4});
}

TEST_CASE("finite differences") {
  SUBCASE("sum gives ones") {
    Rng rng(1);
    auto x = randn<double>({4}, rng);
    auto g = finite_diff_grad<double>([](const Tensor<double>& t) { return sum(t).item(); }, x, 1e-5);
    for (double v : g.data()) CHECK(std::abs(v - 1.0) < 1e-9);
  }
  SUBCASE("half squared norm") {
    auto x = Tensor<double>::from({2}, {1, 2});
    auto g = finite_diff_grad<double>([](const Tensor<double>& t) { return 0.5 * sum(mul(t, t)).item(); }, x, 1e-5);
    CHECK(std::abs(g.data()[0] - 1) < 1e-6);
    CHECK(std::abs(g.data()[1] - 2) < 1e-6);
    CHECK(values(x) == std::vector<double>{1, 2});
  }
  SUBCASE("non-finite objective is an error") {
    auto x = Tensor<double>::from({1}, {1});
    CHECK_THROWS_AS(finite_diff_grad<double>([](const Tensor<double>&) { return std::log(-1.0); }, x, 1e-5),
                    NumericError);
  }
  SUBCASE("eps must be positive") {
    auto x = Tensor<double>::from({1}, {1});
    CHECK_THROWS(finite_diff_grad<double>([](const Tensor<double>& t) { return t.item(); }, x, 0.0));
  }
}

TEST_CASE("every differentiable op agrees with central differences over 20 seeds") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CAPTURE(seed);
    Rng rng(seed);
    auto a = randn<double>({3, 4}, rng, 1.0, true);
    auto b = randn<double>({3, 4}, rng, 1.0, true);
    auto c = randn<double>({4, 2}, rng, 1.0, true);
    Probe p34({3, 4}, seed + 100), p32({3, 2}, seed + 200), p43({4, 3}, seed + 300), p26({2, 6}, seed + 400);
    CHECK(grad_error([&] { return p34(add(a, b)); }, a) < 1e-5);
    CHECK(grad_error([&] { return p34(sub(a, b)); }, b) < 1e-5);
    CHECK(grad_error([&] { return p34(mul(a, b)); }, a) < 1e-6);
    CHECK(grad_error([&] { return p34(mul(a, b)); }, b) < 1e-6);
    CHECK(grad_error([&] { return p34(scale(a, -1.7)); }, a) < 1e-5);
    CHECK(grad_error([&] { return p34(relu(a)); }, a) < 1e-5);
    CHECK(grad_error([&] { return p32(matmul(a, c)); }, a) < 1e-5);
    CHECK(grad_error([&] { return p32(matmul(a, c)); }, c) < 1e-5);
    CHECK(grad_error([&] { return p43(transpose(a)); }, a) < 1e-5);
    CHECK(grad_error([&] { return p26(reshape(a, {2, 6})); }, a) < 1e-5);
    CHECK(grad_error([&] { return sum(mul(a, a)); }, a) < 1e-5);
  }
}

TEST_CASE("backprop through a two-layer composition matches finite differences") {
  Rng rng(9);
  auto x = randn<double>({5, 4}, rng);
  auto w1 = randn<double>({4, 6}, rng, 0.5, true);
  auto w2 = randn<double>({6, 3}, rng, 0.5, true);
  Probe p({5, 3}, 10);
  auto loss = [&] { return p(matmul(relu(matmul(x, w1)), w2)); };
  CHECK(grad_error(loss, w1) < 1e-6);
  CHECK(grad_error(loss, w2) < 1e-6);
}

TEST_CASE("rng stream is a pure function of seed and counter") {
  // Reference outputs of the splitmix64 generator seeded with 0.
  Rng r(0);
  CHECK(r.next_u64() == 0xE220A8397B1DCDAFULL);
  CHECK(r.next_u64() == 0x6E789E6AA1B965F4ULL);
  CHECK(r.next_u64() == 0x06C45D188009454FULL);

  Rng a(42), b(42);
  for (int i = 0; i < 5; ++i) a.normal();
  Rng c(42, a.counter());
  CHECK(a.next_u64() == c.next_u64());
  for (int i = 0; i < 100; ++i) {
    const auto before = b.counter();
    const double v = b.normal();
    CHECK(v == Rng(42, before).normal());
  }
  CHECK(Rng(1).fork(3).next_u64() == Rng(1).fork(3).next_u64());
  CHECK(Rng(1).fork(3).next_u64() != Rng(1).fork(4).next_u64());
}

TEST_CASE("randn is deterministic and roughly standard normal") {
  Rng r1(11), r2(11);
  auto a = randn<double>({4000}, r1);
  auto b = randn<double>({4000}, r2);
  CHECK(values(a) == values(b));
  double mean = 0, sq = 0;
  for (double v : a.data()) mean += v;
  mean /= 4000;
  for (double v : a.data()) sq += (v - mean) * (v - mean);
  CHECK(std::abs(mean) < 0.1);
  CHECK(std::abs(sq / 3999 - 1.0) < 0.1);
}
