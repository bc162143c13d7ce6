#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "support.hpp"

#include "dgcn/cost.hpp"

using namespace dgcn;
using testsupport::values;

namespace {

DGCConfig head_config(std::size_t d_in, std::size_t d, std::size_t rate, ProjectionMode mode, Variant v = Variant::both) {
  DGCConfig c;
  c.in_channels = d_in;
  c.channels = d;
  c.classes = 5;
  c.coord.downsample = rate;
  c.coord.mode = mode;
  c.variant = v;
  return c;
}

}  // namespace

TEST_CASE("closed-form module parameters, hand-evaluated") {
  // D = 512, h = 256, q = 128, three chained depthwise layers.
  // coordinate: 13824 + 3 (131072 + 256) + 65536 + (131072 + 512) = 604928
  // feature:    131328 + 512 + 65536 + 256 + 16384 + 65536 + 131584 + 1024 = 412160
  CHECK(closed_form_module_params(512, 8, ProjectionMode::strided_conv) == 1'017'088);
  CHECK(closed_form_module_params(512, 8, ProjectionMode::avg_pool) == 1'003'264);
  CHECK(closed_form_module_params(512, 8, ProjectionMode::strided_conv) -
            closed_form_module_params(512, 8, ProjectionMode::avg_pool) ==
        13'824);
  CHECK(closed_form_module_params(512, 1, ProjectionMode::strided_conv) == 1'003'264);
}

TEST_CASE("itemized report agrees with the closed form") {
  for (auto mode : {ProjectionMode::avg_pool, ProjectionMode::strided_conv}) {
    for (std::size_t rate : {1, 2, 4, 8, 16}) {
      auto cfg = head_config(512, 512, rate, mode);
      auto r = count_costs(cfg, {1, 512, 128, 128}, MessageOrder::factor_first);
      CHECK(r.module_params() == closed_form_module_params(512, rate, mode));
      CHECK(r.total_params() == closed_form_head_params(cfg));
    }
  }
}

TEST_CASE_TEMPLATE("constructed heads hold exactly the closed-form count", T, float, double) {
  for (auto v : {Variant::baseline, Variant::coord, Variant::feat, Variant::both}) {
    for (auto mode : {ProjectionMode::avg_pool, ProjectionMode::strided_conv}) {
      CAPTURE(to_string(v));
      auto cfg = head_config(24, 32, 4, mode, v);
      Rng rng(1);
      auto head = init_head<T>(cfg, rng);
      CHECK(count_params(head) == closed_form_head_params(cfg));
      auto r = count_costs(cfg, {1, 32, 16, 16}, MessageOrder::factor_first);
      CHECK(r.total_params() == closed_form_head_params(cfg));
    }
  }
}

TEST_CASE("module at 1x512x128x128, d = 8, strided lands near the target figures") {
  auto r = count_costs(head_config(512, 512, 8, ProjectionMode::strided_conv), {1, 512, 128, 128},
                       MessageOrder::factor_first);
  const double params_ratio = double(r.module_params()) / double(kTargetModuleParams);
  const double flops_ratio = double(r.module_flops()) / 1e9 / kTargetModuleGflops;
  CHECK(params_ratio > 0.7);
  CHECK(params_ratio < 1.3);
  CHECK(flops_ratio > 0.7);
  CHECK(flops_ratio < 1.3);
  CHECK(double(r.module_flops()) / 1e9 < kTargetNonlocalGflops);
  CHECK(r.module_flops() < nonlocal_reference({1, 512, 128, 128}).total_flops());
}

TEST_CASE("coordinate message FLOPs") {
  SUBCASE("explicit product counts") {
    // adjacency-first: [n x h][h x n], [n x n][n x h], [n x h][h x h]
    // factor-first:    [h x n][n x h], [n x h][h x h], [n x h][h x h]
    for (std::uint64_t n : {1, 7, 64, 1024}) {
      for (std::uint64_t h : {4, 16, 256}) {
        CHECK(coord_message_flops(n, h, MessageOrder::adjacency_first) == 2 * n * h * n + 2 * n * n * h + 2 * n * h * h);
        CHECK(coord_message_flops(n, h, MessageOrder::factor_first) == 6 * n * h * h);
      }
    }
  }
  SUBCASE("factor-first never costs more once n >= D/2") {
    for (std::uint64_t h : {2, 16, 256})
      for (std::uint64_t n = h; n < 40 * h; n += h / 2 + 1)
        CHECK(coord_message_flops(n, h, MessageOrder::factor_first) <=
              coord_message_flops(n, h, MessageOrder::adjacency_first));
  }
  SUBCASE("ratio at d = 1, 128x128, D = 512") {
    const double adj = double(coord_message_flops(128 * 128, 256, MessageOrder::adjacency_first));
    const double fac = double(coord_message_flops(128 * 128, 256, MessageOrder::factor_first));
    CHECK(adj / fac == doctest::Approx((4.0 * 16384 + 2 * 256) / (6.0 * 256)));
    CHECK(adj / fac >= 16);
  }
  SUBCASE("report uses the requested order") {
    auto cfg = head_config(512, 512, 1, ProjectionMode::avg_pool);
    auto a = count_costs(cfg, {1, 512, 128, 128}, MessageOrder::adjacency_first);
    auto f = count_costs(cfg, {1, 512, 128, 128}, MessageOrder::factor_first);
    CHECK(a.module_flops() > f.module_flops());
    CHECK(a.module_params() == f.module_params());
  }
}

TEST_CASE("batch scales FLOPs but not parameters") {
  auto cfg = head_config(64, 64, 4, ProjectionMode::strided_conv);
  auto one = count_costs(cfg, {1, 64, 32, 32}, MessageOrder::factor_first);
  auto four = count_costs(cfg, {4, 64, 32, 32}, MessageOrder::factor_first);
  CHECK(four.total_flops() == 4 * one.total_flops());
  CHECK(four.total_params() == one.total_params());
}

TEST_CASE("cost shape parsing") {
  auto s = CostShape::parse("2x64x32x48");
  CHECK(s.batch == 2);
  CHECK(s.width == 48);
  CHECK(s.str() == "2x64x32x48");
  for (const char* bad : {"", "1x2x3", "1x2x3x4x5", "1xx3x4", "1x0x3x4", "1x-2x3x4", "axbxcxd"}) {
    CAPTURE(bad);
    CHECK_THROWS_AS(CostShape::parse(bad), ConfigError);
  }
  CHECK_THROWS_AS(count_costs(head_config(64, 64, 8, ProjectionMode::avg_pool), {1, 64, 36, 36},
                              MessageOrder::factor_first),
                  ConfigError);
}

TEST_CASE("render_table") {
  auto r = count_costs(head_config(64, 64, 4, ProjectionMode::strided_conv), {1, 64, 32, 32},
                       MessageOrder::factor_first);
  auto csv = render_table(r, true);
  CHECK(csv.rfind("submodule,params,flops,order\n", 0) == 0);
  CHECK(csv.find("coord.message,") != std::string::npos);
  CHECK(csv.find(",factor-first") != std::string::npos);
  CHECK(render_table(r, false).find("coord.message") != std::string::npos);
}

TEST_CASE("head wiring") {
  Rng rng(2);
  SUBCASE("variants carry only their branches") {
    for (auto v : {Variant::baseline, Variant::coord, Variant::feat, Variant::both}) {
      auto head = init_head<double>(head_config(8, 16, 4, ProjectionMode::strided_conv, v), rng);
      CHECK(head.coord.has_value() == has_coord(v));
      CHECK(head.feat.has_value() == has_feat(v));
      std::set<std::string> names;
      for (const auto& p : head.parameters()) {
        CHECK(names.insert(p.name).second);
        CHECK(p.name.rfind("head.", 0) == 0);
      }
      CHECK(variant_from_string(to_string(v)) == v);
    }
    CHECK_THROWS(variant_from_string("all"));
  }
  SUBCASE("3x3 convs carry no bias") {
    auto head = init_head<double>(head_config(8, 16, 4, ProjectionMode::avg_pool), rng);
    CHECK_FALSE(head.entry.bias.defined());
    CHECK_FALSE(head.exit.bias.defined());
  }
  SUBCASE("fusion adds pointwise") {
    auto x = randn<double>({2, 3, 3}, rng);
    auto a = randn<double>({2, 3, 3}, rng);
    auto b = randn<double>({2, 3, 3}, rng);
    auto f = fuse(x, a, b);
    for (std::size_t i = 0; i < 18; ++i) CHECK(f.data()[i] == (x.data()[i] + a.data()[i]) + b.data()[i]);
  }
  SUBCASE("silenced branches leave the module an identity") {
    auto head = init_head<double>(head_config(8, 16, 4, ProjectionMode::strided_conv), rng);
    head.coord->xi.weight = Tensor<double>::zeros({16, 8});
    head.coord->xi.bias = Tensor<double>::zeros({16});
    head.feat->reproj_bn.gamma = Tensor<double>::zeros({16});
    auto x = randn<double>({16, 8, 8}, rng);
    CHECK(values(module_forward(x, head, true)) == values(x));
  }
  SUBCASE("zeroed output convs leave the module an identity in both modes") {
    auto head = init_head<double>(head_config(8, 16, 4, ProjectionMode::avg_pool), rng);
    head.coord->xi.weight = Tensor<double>::zeros({16, 8});
    head.coord->xi.bias = Tensor<double>::zeros({16});
    head.feat->reproj.weight = Tensor<double>::zeros({16, 8});
    head.feat->reproj.bias = Tensor<double>::zeros({16});
    auto x = randn<double>({16, 8, 8}, rng);
    CHECK(values(module_forward(x, head, false)) == values(x));
    CHECK(values(module_forward(x, head, true)) == values(x));
  }
  SUBCASE("baseline module is the identity") {
    auto head = init_head<double>(head_config(8, 16, 4, ProjectionMode::strided_conv, Variant::baseline), rng);
    auto x = randn<double>({16, 8, 8}, rng);
    CHECK(values(module_forward(x, head, true)) == values(x));
  }
  SUBCASE("logits shape and determinism") {
    auto cfg = head_config(8, 16, 4, ProjectionMode::strided_conv);
    Rng r1(9), r2(9);
    auto h1 = init_head<double>(cfg, r1);
    auto h2 = init_head<double>(cfg, r2);
    auto f = randn<double>({8, 12, 8}, rng);
    auto y1 = head_forward(f, h1, false);
    CHECK(y1.shape() == Shape{5, 12, 8});
    CHECK(values(y1) == values(head_forward(f, h2, false)));
  }
  SUBCASE("config validation") {
    CHECK_THROWS_AS(head_config(8, 18, 4, ProjectionMode::avg_pool).validate(), ConfigError);
    CHECK_THROWS_AS(head_config(8, 16, 3, ProjectionMode::strided_conv).validate(), ConfigError);
  }
}

TEST_CASE("head gradients match finite differences") {
  Rng rng(3);
  auto head = init_head<double>(head_config(4, 8, 4, ProjectionMode::strided_conv), rng);
  head.feat->a_f = Tensor<double>::from({2, 2}, values(randn<double>({2, 2}, rng, 0.5)), true);
  head.feat->w_f = Tensor<double>::from({4, 4}, values(randn<double>({4, 4}, rng, 0.5)), true);
  auto f = randn<double>({4, 8, 8}, rng, 1.0, true);
  testsupport::Probe probe({5, 8, 8}, 4);
  auto loss = [&] { return probe(head_forward(f, head, false)); };
  CHECK(testsupport::grad_error(loss, f) < 1e-5);
  for (auto& p : head.parameters()) {
    if (!p.trainable) continue;
    CAPTURE(p.name);
    CHECK(testsupport::grad_error(loss, p.tensor) < 1e-5);
  }
}
