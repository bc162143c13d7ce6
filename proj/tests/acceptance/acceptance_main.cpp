// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "cli/commands.hpp"
#include "dgcn/checkpoint.hpp"
#include "dgcn/cost.hpp"
#include "dgcn/losses.hpp"
#include "dgcn/train.hpp"

using namespace dgcn;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::vector<double> values(const Tensor<double>& t) { return {t.data().begin(), t.data().end()}; }

template <typename T>
bool same_params(const SegModel<T>& a, const SegModel<T>& b) {
  auto pa = a.parameters(), pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (pa[i].name != pb[i].name) return false;
    auto x = pa[i].tensor.data(), y = pb[i].tensor.data();
    if (!std::equal(x.begin(), x.end(), y.begin(), y.end())) return false;
  }
  return true;
}

// 1. gradient check of the whole head in f64
Outcome gradient_correctness() {
  const auto cfg = default_gradcheck_config();
  const auto report = cli::run_gradcheck(cfg, 1e-6, 1);
  bool coord = false, feat = false, head = false;
  for (const auto& g : report.groups) {
    coord = coord || g.name.find(".coord.") != std::string::npos;
    feat = feat || g.name.find(".feat.") != std::string::npos;
    head = head || g.name.find(".classifier.") != std::string::npos;
  }
  const bool pass = report.passed(1e-5) && report.seconds < 60 && coord && feat && head;
  return {pass, std::to_string(report.groups.size()) + " tensors, worst rel err " + fmt("%.2e", report.worst) +
                    " (< 1e-5), " + fmt("%.2f", report.seconds) + " s (< 60)"};
}

// 2. evaluation orders agree in value; factor-first is never dearer once n >= D/2
Outcome order_equivalence() {
  const auto eq = cli::run_equiv(cli::default_equiv_config(), 20, 1e-8, 1);
  bool cheaper = true;
  for (std::uint64_t h : {4, 16, 64, 256})
    for (std::uint64_t n = h; n <= 64 * h; n += std::max<std::uint64_t>(1, h / 3))
      cheaper = cheaper && coord_message_flops(n, h, MessageOrder::factor_first) <=
                               coord_message_flops(n, h, MessageOrder::adjacency_first);
  DGCConfig cfg;
  cfg.in_channels = cfg.channels = 512;
  cfg.coord.downsample = 1;
  cfg.coord.mode = ProjectionMode::avg_pool;
  const CostShape shape{1, 512, 128, 128};
  auto message = [&](MessageOrder o) {
    for (const auto& it : count_costs(cfg, shape, o).items)
      if (it.submodule == "coord.message") return static_cast<double>(it.flops);
    return 0.0;
  };
  const double ratio = message(MessageOrder::adjacency_first) / message(MessageOrder::factor_first);
  const double module_ratio = static_cast<double>(count_costs(cfg, shape, MessageOrder::adjacency_first).module_flops()) /
                              static_cast<double>(count_costs(cfg, shape, MessageOrder::factor_first).module_flops());
  const bool pass = eq.trials == 20 && eq.nodes == 64 && eq.failures == 0 && cheaper && ratio >= 16;
  return {pass, "20 trials n=64 D=32 worst rel " + fmt("%.2e", eq.worst_rel_error) + " (< 1e-8); factor<=adjacency " +
                    (cheaper ? "holds" : "violated") + "; message FLOP ratio " + fmt("%.1f", ratio) +
                    " (>= 16), whole-module ratio " + fmt("%.2f", module_ratio)};
}

// 3. analytic cost at 1x512x128x128, d = 8, strided projection
Outcome cost_reproduction() {
  DGCConfig cfg;
  cfg.in_channels = cfg.channels = 512;
  cfg.coord.downsample = 8;
  cfg.coord.mode = ProjectionMode::strided_conv;
  const CostShape shape{1, 512, 128, 128};
  const auto r = count_costs(cfg, shape, MessageOrder::factor_first);
  const auto closed = closed_form_module_params(512, 8, ProjectionMode::strided_conv);
  Rng rng(0);
  const auto constructed = count_params(init_head<float>(cfg, rng));
  const double p_ratio = static_cast<double>(r.module_params()) / static_cast<double>(kTargetModuleParams);
  const double gflops = static_cast<double>(r.module_flops()) / 1e9;
  const double f_ratio = gflops / kTargetModuleGflops;
  const double nonlocal = static_cast<double>(nonlocal_reference(shape).total_flops()) / 1e9;
  const bool pass = r.module_params() == closed && constructed == closed_form_head_params(cfg) &&
                    std::abs(p_ratio - 1) <= 0.3 && std::abs(f_ratio - 1) <= 0.3 && gflops < kTargetNonlocalGflops &&
                    gflops < nonlocal;
  return {pass, "params " + std::to_string(r.module_params()) + " = closed form " + std::to_string(closed) +
                    ", ratio " + fmt("%.3f", p_ratio) + "; " + fmt("%.2f", gflops) + " GFLOPs, ratio " +
                    fmt("%.3f", f_ratio) + "; below " + fmt("%.2f", kTargetNonlocalGflops) +
                    " G and the same-convention non-local " + fmt("%.1f", nonlocal) + " G"};
}

// 4. graph structure of both branches and the fusion identity
Outcome structural_fidelity() {
  DGCConfig cfg;
  cfg.in_channels = 8;
  cfg.channels = 16;
  cfg.classes = 3;
  cfg.coord.downsample = 4;
  cfg.coord.mode = ProjectionMode::strided_conv;
  Rng rng(4);
  auto head = init_head<double>(cfg, rng);
  auto x = randn<double>({16, 16, 16}, rng, 1.0, true);

  using Node = detail::Node<double>;
  struct Walk {
    Tensor<double> root;  // keeps the graph alive
    std::vector<const Node*> nodes;
    std::map<const Node*, std::vector<const Node*>> consumers;
    explicit Walk(Tensor<double> result) : root(std::move(result)) {
      std::vector<const Node*> stack{root.node().get()};
      std::vector<const Node*> seen;
      while (!stack.empty()) {
        auto* n = stack.back();
        stack.pop_back();
        if (std::find(seen.begin(), seen.end(), n) != seen.end()) continue;
        seen.push_back(n);
        nodes.push_back(n);
        for (const auto& in : n->inputs) {
          consumers[in.get()].push_back(n);
          stack.push_back(in.get());
        }
      }
    }
    static bool is(const Node* n, const char* op) { return n->op && std::string(n->op) == op; }
    std::size_t count(const char* op) const {
      return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [&](auto* n) { return is(n, op); }));
    }
    const Node* next(const Node* n, const char* op) const {
      auto it = consumers.find(n);
      if (it == consumers.end()) return nullptr;
      for (auto* c : it->second)
        if (is(c, op)) return c;
      return nullptr;
    }
  };

  Walk coord(coord_gcn_forward(x, cfg.coord, *head.coord));
  const bool coord_clean = coord.count("batchnorm") == 0 && coord.count("relu") == 0;

  Walk feat(feature_gcn_forward(x, *head.feat, true));
  std::size_t convs = 0, wrapped = 0;
  for (auto* n : feat.nodes) {
    if (!Walk::is(n, "conv1x1")) continue;
    ++convs;
    auto* bn = feat.next(n, "batchnorm");
    wrapped += bn && feat.next(bn, "relu");
  }
  const bool feat_wrapped = convs == 3 && wrapped == 3;

  // Fresh head: the walks above moved the BN running statistics.
  Rng fresh_rng(4);
  head = init_head<double>(cfg, fresh_rng);
  head.coord->xi.weight = Tensor<double>::zeros(head.coord->xi.weight.shape());
  head.coord->xi.bias = Tensor<double>::zeros(head.coord->xi.bias.shape());
  head.feat->reproj.weight = Tensor<double>::zeros(head.feat->reproj.weight.shape());
  head.feat->reproj.bias = Tensor<double>::zeros(head.feat->reproj.bias.shape());
  const bool identity = values(module_forward(x, head, true)) == values(x) &&
                        values(module_forward(x, head, false)) == values(x);

  return {coord_clean && feat_wrapped && identity,
          "coordinate branch: " + std::to_string(coord.count("batchnorm")) + " BN, " +
              std::to_string(coord.count("relu")) + " ReLU; feature branch: " + std::to_string(wrapped) + "/" +
              std::to_string(convs) + " convs followed by BN+ReLU; fuse == X with zeroed output convs: " +
              (identity ? "yes" : "no")};
}

// 5. Laplacian residual edge cases, exact
Outcome laplacian_residual() {
  Rng rng(5);
  auto v = randn<double>({16, 32}, rng);
  auto w = randn<double>({32, 32}, rng);
  const bool zero_adj = values(feature_message(v, Tensor<double>::zeros({16, 16}), w)) == values(matmul(v, w));
  const auto m = values(feature_message(v, Tensor<double>::eye(16), w));
  const bool identity_adj = std::all_of(m.begin(), m.end(), [](double x) { return x == 0.0; });
  return {zero_adj && identity_adj, std::string("A_F=0 -> V W exactly: ") + (zero_adj ? "yes" : "no") +
                                        "; A_F=I -> 0 exactly: " + (identity_adj ? "yes" : "no")};
}

// 6. toy-task trend over three seeds
Outcome toy_trend() {
  const auto t0 = std::chrono::steady_clock::now();
  auto cfg = default_toy_config();
  cfg.train.iterations = 4000;
  cfg.train.eval_interval = cfg.train.iterations;
  auto data = gen_toy_dataset(cfg.data_seed, cfg.samples, cfg.task_shape(), cli::thread_cap());
  const std::size_t split = validation_start(data.size());
  const std::vector<ToySample> train_set(data.begin(), data.begin() + static_cast<std::ptrdiff_t>(split));
  const std::vector<ToySample> val_set(data.begin() + static_cast<std::ptrdiff_t>(split), data.end());

  const std::vector<Variant> variants{Variant::baseline, Variant::coord, Variant::feat, Variant::both};
  const std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<std::pair<Variant, std::uint64_t>> jobs;
  for (auto v : variants)
    for (auto s : seeds) jobs.emplace_back(v, s);
  std::vector<double> miou(jobs.size(), 0.0);
  std::atomic<std::size_t> next{0};
  std::mutex io;
  std::exception_ptr failure;
  auto worker = [&] {
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      try {
        auto run_cfg = cfg;
        run_cfg.variant = jobs[j].first;
        run_cfg.train.seed = jobs[j].second;
        miou[j] = train<float>(run_cfg.model_config(), run_cfg.train, train_set, val_set).log.back().val_miou;
        std::lock_guard lock(io);
        std::cout << "  " << to_string(jobs[j].first) << " seed " << jobs[j].second << "  val mIoU "
                  << format_miou(miou[j]) << "  (" << fmt("%.0f", seconds_since(t0)) << " s)" << std::endl;
      } catch (...) {
        std::lock_guard lock(io);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < std::min(cli::thread_cap(), jobs.size()); ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  std::map<Variant, double> mean;
  for (std::size_t j = 0; j < jobs.size(); ++j) mean[jobs[j].first] += miou[j] / static_cast<double>(seeds.size());
  const double both = mean[Variant::both], coord = mean[Variant::coord], feat = mean[Variant::feat],
               base = mean[Variant::baseline];
  const double elapsed = seconds_since(t0);
  const bool pass = both > coord && both > feat && coord > base && feat > base && both - base >= 0.10 &&
                    elapsed < 30 * 60;
  return {pass, "mean val mIoU both " + fmt("%.4f", both) + ", coord " + fmt("%.4f", coord) + ", feat " +
                    fmt("%.4f", feat) + ", baseline " + fmt("%.4f", base) + "; gap " + fmt("%.1f", 100 * (both - base)) +
                    " points (>= 10); " + fmt("%.0f", elapsed) + " s (< 1800)"};
}

// 7. OHEM, poly schedule and multi-scale inference
Outcome strategy_ops() {
  Rng rng(7);
  auto logits = randn<double>({5, 16, 16}, rng, 2.0);
  LabelMap labels{16, 16, std::vector<std::uint8_t>(256)};
  for (auto& l : labels.labels) l = static_cast<std::uint8_t>(rng.below(5));
  const double ce = cross_entropy(logits, labels).item();
  const double ohem = ohem_loss(logits, labels, 256).item();
  const double ohem_err = std::abs(ohem - ce) / ce;
  const bool ohem_ok = ohem_err <= 8 * std::numeric_limits<double>::epsilon();

  const double lr = poly_lr(2000, 4000, 0.01);
  const double lr_err = std::abs(lr - 0.01 * std::pow(0.5, 0.9));

  auto cfg = default_toy_config();
  std::size_t mismatched = 0, images = 0;
  for (auto v : {Variant::baseline, Variant::both}) {
    cfg.variant = v;
    Rng init(11);
    auto model = SegModel<float>::init(cfg.model_config(), init);
    for (std::uint64_t s = 0; s < 10; ++s, ++images) {
      auto sample = gen_toy_sample(1000 + s, cfg.task_shape());
      mismatched += predict(model, sample.image) != predict(model, sample.image, {1.0});
    }
  }
  return {ohem_ok && lr_err <= 1e-12 && mismatched == 0,
          "ohem(K=all) vs CE rel " + fmt("%.1e", ohem_err) + "; poly_lr(total/2) err " + fmt("%.1e", lr_err) +
              " (<= 1e-12); scales={1} argmax identical on " + std::to_string(images - mismatched) + "/" +
              std::to_string(images) + " images"};
}

// 8. checkpoint round trip and train -> eval reproducibility through the CLI
Outcome persistence() {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "dgcn_acceptance_persistence";
  fs::remove_all(dir);
  fs::create_directories(dir);

  auto cfg = default_toy_config();
  Rng rng(8);
  auto model = SegModel<float>::init(cfg.model_config(), rng);
  model.forward(image_as<float>(gen_toy_sample(3, cfg.task_shape()).image), true);  // non-trivial BN buffers
  save_checkpoint(dir / "round.dgcn", model, cfg);
  auto loaded = load_checkpoint<float>(dir / "round.dgcn");
  const bool round_trip = same_params(model, loaded);

  auto call = [](std::vector<std::string> args, std::string& text) {
    std::vector<const char*> argv{"dgcn"};
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    text = out.str();
    return code;
  };
  auto after = [](const std::string& text, const std::string& key) {
    const auto pos = text.rfind(key);
    if (pos == std::string::npos) return std::string("?");
    std::istringstream ss(text.substr(pos + key.size()));
    std::string v;
    ss >> v;
    return v;
  };
  const std::string data = (dir / "data").string(), run = (dir / "run").string();
  std::string train_out, eval_out;
  const int train_code = call({"train", "--generate", "--data", data, "--out", run, "--variant", "both", "--iterations",
                               "200", "--set", "samples=60", "--set", "eval_interval=100"},
                              train_out);
  const int eval_code = call({"eval", "--checkpoint", run + "/checkpoint.dgcn", "--data", data}, eval_out);
  const auto logged = after(train_out, "final val_miou ");
  const auto evaluated = after(eval_out, "mIoU ");
  fs::remove_all(dir);
  const bool repro = train_code == 0 && eval_code == 0 && logged != "?" && logged == evaluated;
  return {round_trip && repro, std::string("checkpoint round trip bit-exact: ") + (round_trip ? "yes" : "no") +
                                   "; logged val mIoU " + logged + ", eval mIoU " + evaluated};
}

}  // namespace

int main() {
  cli::configure_allocator();
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradient_correctness},
      {"order equivalence", order_equivalence},
      {"cost reproduction", cost_reproduction},
      {"structural fidelity", structural_fidelity},
      {"laplacian residual", laplacian_residual},
      {"toy-task trend", toy_trend},
      {"strategy ops", strategy_ops},
      {"persistence", persistence},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << "criterion " << i + 1 << " " << (o.pass ? "PASS" : "FAIL") << "  " << criteria[i].first << ": "
              << o.detail << std::endl;
  }
  std::cout << (failed ? std::to_string(failed) + " criteria failed" : "all criteria passed") << std::endl;
  return failed ? 1 : 0;
}
