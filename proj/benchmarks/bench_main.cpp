#include <benchmark/benchmark.h>

#include "dgcn/cost.hpp"
#include "dgcn/head.hpp"
#include "dgcn/losses.hpp"

using namespace dgcn;

namespace {

void BM_Conv3x3(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  auto p = Conv3x3Params<float>::init(d, d, false, rng);
  auto x = randn<float>({d, 64, 64}, rng);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(conv3x3(x, p).data().data());
  state.SetItemsProcessed(state.iterations() * 2 * 9 * 64 * 64 * static_cast<std::int64_t>(d * d));
}
BENCHMARK(BM_Conv3x3)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

// Both evaluation orders of the coordinate message on n nodes of width D = 64.
void BM_CoordMessage(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto order = state.range(1) ? MessageOrder::factor_first : MessageOrder::adjacency_first;
  CoordGCNConfig cfg;
  Rng rng(2);
  auto p = CoordGCNParams<float>::init(64, cfg, rng);
  auto v = randn<float>({n, 64}, rng);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(coord_message(v, p, order).data().data());
  state.SetLabel(to_string(order));
  state.counters["flops"] = static_cast<double>(coord_message_flops(n, 32, order));
}
BENCHMARK(BM_CoordMessage)
    ->ArgsProduct({{64, 256, 1024}, {0, 1}})
    ->Unit(benchmark::kMicrosecond);

void BM_HeadForward(benchmark::State& state) {
  DGCConfig cfg;
  cfg.variant = static_cast<Variant>(state.range(0));
  Rng rng(3);
  auto head = init_head<float>(cfg, rng);
  auto x = randn<float>({cfg.in_channels, 64, 64}, rng);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(head_forward(x, head, false).data().data());
  state.SetLabel(to_string(cfg.variant));
}
BENCHMARK(BM_HeadForward)->DenseRange(0, 3)->Unit(benchmark::kMillisecond);

void BM_HeadTrainStep(benchmark::State& state) {
  DGCConfig cfg;
  Rng rng(4);
  auto head = init_head<float>(cfg, rng);
  auto x = randn<float>({cfg.in_channels, 64, 64}, rng);
  LabelMap labels{64, 64, std::vector<std::uint8_t>(64 * 64)};
  for (auto& l : labels.labels) l = static_cast<std::uint8_t>(rng.below(cfg.classes));
  for (auto _ : state) cross_entropy(head_forward(x, head, true), labels).backward();
}
BENCHMARK(BM_HeadTrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
