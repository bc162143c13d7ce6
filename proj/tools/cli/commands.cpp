#include "commands.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "dgcn/checkpoint.hpp"
#include "dgcn/cost.hpp"
#include "dgcn/losses.hpp"
#include "dgcn/ops.hpp"

namespace dgcn::cli {

namespace fs = std::filesystem;

namespace {

struct ConfigArgs {
  std::string path;
  std::vector<std::string> sets;
};

void add_config_options(CLI::App* sub, ConfigArgs& args) {
  sub->add_option("--config", args.path, "key=value config file");
  sub->add_option("--set", args.sets, "override one setting, KEY=VALUE (repeatable)");
}

RunConfig build_config(const ConfigArgs& args, RunConfig base) {
  RunConfig cfg = args.path.empty() ? std::move(base) : load_config(args.path, std::move(base));
  for (const auto& s : args.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects KEY=VALUE, got '" + s + "'");
    apply_setting(cfg, s.substr(0, eq), s.substr(eq + 1));
  }
  return cfg;
}

std::string fmt(const char* format, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, format, v);
  return buf;
}

struct DataArgs {
  std::string dir;
  bool generate = false;
  std::string split = "val";
};

void add_data_options(CLI::App* sub, DataArgs& args, bool with_split) {
  sub->add_option("--data", args.dir, "dataset directory (manifest.txt + TNSR samples)");
  sub->add_flag("--generate", args.generate, "generate the dataset from the config seed when it is not on disk");
  if (with_split) {
    sub->add_option("--split", args.split, "which samples to use")->check(CLI::IsMember({"train", "val", "all"}));
  }
}

std::vector<ToySample> resolve_dataset(const RunConfig& cfg, const DataArgs& args, std::ostream& out) {
  if (!args.dir.empty() && fs::exists(fs::path(args.dir) / "manifest.txt")) {
    auto ds = load_dataset(args.dir);
    const auto want = cfg.task_shape();
    if (ds.shape.height != want.height || ds.shape.width != want.width || ds.shape.classes != want.classes) {
      throw ConfigError("dataset in " + args.dir + " is " + std::to_string(ds.shape.height) + "x" +
                        std::to_string(ds.shape.width) + " with " + std::to_string(ds.shape.classes) +
                        " classes, config expects " + std::to_string(want.height) + "x" + std::to_string(want.width) +
                        " with " + std::to_string(want.classes));
    }
    return std::move(ds.samples);
  }
  if (!args.generate) {
    throw ConfigError(args.dir.empty() ? "no dataset given; pass --data DIR and/or --generate"
                                       : "no dataset in " + args.dir + "; pass --generate to create it");
  }
  auto samples = gen_toy_dataset(cfg.data_seed, cfg.samples, cfg.task_shape(), thread_cap());
  if (!args.dir.empty()) {
    save_dataset(args.dir, samples, cfg.data_seed, cfg.task_shape());
    out << "wrote " << samples.size() << " samples to " << args.dir << '\n';
  }
  return samples;
}

std::vector<ToySample> select_split(std::vector<ToySample> all, const std::string& split) {
  if (split == "all") return all;
  const std::size_t start = validation_start(all.size());
  if (split == "val") return {std::make_move_iterator(all.begin() + static_cast<std::ptrdiff_t>(start)),
                              std::make_move_iterator(all.end())};
  all.resize(start);
  return all;
}

// --- gradcheck ---------------------------------------------------------------

int cmd_gradcheck(const RunConfig& cfg, double eps, double tolerance, std::uint64_t seed, bool corrupt,
                  std::ostream& out) {
  if (cfg.dtype != DType::f64) out << "note: gradient checks always run in f64\n";
  detail::set_corrupt_backward(corrupt);
  GradcheckReport report;
  try {
    report = run_gradcheck(cfg, eps, seed);
  } catch (...) {
    detail::set_corrupt_backward(false);
    throw;
  }
  detail::set_corrupt_backward(false);
  out << std::left << std::setw(34) << "group" << std::right << std::setw(8) << "size" << std::setw(12) << "max|grad|"
      << std::setw(16) << "worst_rel_err" << "  status\n";
  for (const auto& g : report.groups) {
    out << std::left << std::setw(34) << g.name << std::right << std::setw(8) << g.size << std::setw(12)
        << fmt("%.2e", g.grad_norm) << std::setw(16) << fmt("%.3e", g.worst_rel_error) << "  " << (g.worst_rel_error < tolerance ? "ok" : "FAIL") << '\n';
  }
  const bool ok = report.passed(tolerance);
  out << "groups " << report.groups.size() << "  worst " << fmt("%.3e", report.worst) << "  tolerance "
      << fmt("%.1e", tolerance) << "  time " << fmt("%.2f", report.seconds) << "s\n"
      << (ok ? "gradcheck passed" : "gradcheck FAILED") << '\n';
  return ok ? kOk : kFailure;
}

// --- cost --------------------------------------------------------------------

int cmd_cost(const RunConfig& cfg, const std::string& shape_text, const std::string& order_text, bool csv,
             bool compare, std::ostream& out) {
  const auto shape = CostShape::parse(shape_text);
  DGCConfig head = cfg.model_config().head;
  head.in_channels = shape.channels;
  head.channels = shape.channels;
  head.validate();
  if (shape.height % head.coord.downsample || shape.width % head.coord.downsample) {
    throw ConfigError("downsample rate " + std::to_string(head.coord.downsample) + " must divide " + shape.str());
  }

  std::vector<MessageOrder> orders;
  if (order_text == "both") orders = {MessageOrder::adjacency_first, MessageOrder::factor_first};
  else orders = {message_order_from_string(order_text)};

  std::vector<CostReport> reports;
  for (auto order : orders) reports.push_back(count_costs(head, shape, order));
  for (const auto& r : reports) {
    if (!csv) out << "# order " << to_string(r.order) << ", input " << shape.str() << ", d=" << head.coord.downsample
                  << ", " << to_string(head.coord.mode) << ", variant " << to_string(head.variant) << '\n';
    out << render_table(r, csv);
    if (!csv) out << '\n';
  }

  Rng rng(0);
  const auto built = count_params(init_head<float>(head, rng));
  const auto closed = closed_form_head_params(head);
  const auto& r0 = reports.front();
  const bool consistent = built == closed && r0.total_params() == closed;
  if (!csv) {
    out << "module params " << r0.module_params() << "  head params " << r0.total_params() << "  closed form "
        << closed << "  constructed " << built << (consistent ? "" : "  MISMATCH") << '\n';
    for (const auto& r : reports) {
      out << "module GFLOPs (" << to_string(r.order) << ") " << fmt("%.3f", static_cast<double>(r.module_flops()) / 1e9)
          << "  head GFLOPs " << fmt("%.3f", static_cast<double>(r.total_flops()) / 1e9) << '\n';
    }
    if (reports.size() == 2) {
      auto message = [](const CostReport& r) {
        for (const auto& item : r.items)
          if (item.submodule == "coord.message") return static_cast<double>(item.flops);
        return 0.0;
      };
      out << "adjacency-first / factor-first module FLOPs "
          << fmt("%.3f", static_cast<double>(reports[0].module_flops()) / static_cast<double>(reports[1].module_flops()))
          << '\n';
      if (message(reports[1]) > 0) {
        out << "adjacency-first / factor-first coord.message FLOPs "
            << fmt("%.3f", message(reports[0]) / message(reports[1])) << '\n';
      }
    }
  }
  if (compare && !csv) {
    const auto ref = nonlocal_reference(shape);
    const double gflops = static_cast<double>(r0.module_flops()) / 1e9;
    const double ref_gflops = static_cast<double>(ref.total_flops()) / 1e9;
    out << "target module: " << fmt("%.2f", kTargetModuleGflops) << " GFLOPs, " << kTargetModuleParams << " params\n"
        << "params ratio " << fmt("%.3f", static_cast<double>(r0.module_params()) / static_cast<double>(kTargetModuleParams))
        << "  GFLOPs ratio " << fmt("%.3f", gflops / kTargetModuleGflops) << '\n'
        << "non-local reference (same conventions): " << fmt("%.2f", ref_gflops) << " GFLOPs, " << ref.total_params()
        << " params; target " << fmt("%.2f", kTargetNonlocalGflops) << " GFLOPs, " << kTargetNonlocalParams
        << " params\n"
        << "module below reference: " << (r0.module_flops() < ref.total_flops() ? "yes" : "no") << '\n';
  }
  return consistent ? kOk : kFailure;
}

// --- equiv -------------------------------------------------------------------

int cmd_equiv(const RunConfig& cfg, std::size_t trials, double tolerance, std::uint64_t seed, std::ostream& out) {
  const auto r = run_equiv(cfg, trials, tolerance, seed);
  out << "trials " << r.trials << "  nodes " << r.nodes << "  D " << cfg.channels << "  dtype " << to_string(cfg.dtype)
      << "  worst_rel_err " << fmt("%.3e", r.worst_rel_error) << "  tolerance " << fmt("%.1e", tolerance) << '\n'
      << (r.failures ? "order equivalence FAILED in " + std::to_string(r.failures) + " trial(s)"
                     : std::string("order equivalence holds"))
      << '\n';
  return r.failures ? kFailure : kOk;
}

// --- train / eval / infer ----------------------------------------------------

void print_iou(const IoUResult& r, std::ostream& out) {
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    out << "class " << c << "  ";
    if (r.per_class[c]) out << format_miou(*r.per_class[c]) << '\n';
    else out << "absent\n";
  }
  out << "mIoU " << format_miou(r.mean) << '\n';
}

template <typename T>
int train_as(const RunConfig& cfg, const DataArgs& data, const fs::path& out_dir, std::ostream& out) {
  auto samples = resolve_dataset(cfg, data, out);
  const std::size_t start = validation_start(samples.size());
  std::vector<ToySample> train_set(samples.begin(), samples.begin() + static_cast<std::ptrdiff_t>(start));
  std::vector<ToySample> val_set(samples.begin() + static_cast<std::ptrdiff_t>(start), samples.end());
  fs::create_directories(out_dir);
  out << "training variant " << to_string(cfg.variant) << " (" << to_string(cfg.dtype) << ") on " << train_set.size()
      << " samples, validating on " << val_set.size() << '\n';
  auto result = train<T>(cfg.model_config(), cfg.train, train_set, val_set, [&](const LogRow& row) {
    out << "iter " << row.iter << "  lr " << fmt("%.3e", row.lr) << "  loss " << fmt("%.4f", row.loss)
        << "  val_miou " << format_miou(row.val_miou) << std::endl;
  });
  save_checkpoint(out_dir / "checkpoint.dgcn", result.model, cfg);
  std::ofstream log(out_dir / "log.csv");
  write_log_csv(log, result.log);
  if (!log) throw FormatError("failed writing " + (out_dir / "log.csv").string());
  out << "final val_miou " << format_miou(result.log.back().val_miou) << '\n'
      << "wrote " << (out_dir / "checkpoint.dgcn").string() << " and " << (out_dir / "log.csv").string() << '\n';
  return kOk;
}

template <typename T>
int eval_as(const Checkpoint& ckpt, const DataArgs& data, const std::vector<double>& scales, std::ostream& out,
            std::ostream& err) {
  auto model = model_from_checkpoint<T>(ckpt, [&](const std::string& w) { err << "warning: " << w << '\n'; });
  auto samples = select_split(resolve_dataset(ckpt.config, data, out), data.split);
  print_iou(evaluate(model, samples, scales), out);
  return kOk;
}

template <typename T>
int infer_as(const Checkpoint& ckpt, const DataArgs& data, const std::vector<double>& scales, const fs::path& out_dir,
             std::ostream& out, std::ostream& err) {
  auto model = model_from_checkpoint<T>(ckpt, [&](const std::string& w) { err << "warning: " << w << '\n'; });
  auto samples = select_split(resolve_dataset(ckpt.config, data, out), data.split);
  fs::create_directories(out_dir);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto pred = predict(model, samples[i].image, scales);
    char name[32];
    std::snprintf(name, sizeof name, "pred_%05zu.pgm", i);
    write_pgm((out_dir / name).string(), pred.height, pred.width, pred.labels);
  }
  out << "wrote " << samples.size() << " prediction maps to " << out_dir.string() << '\n';
  return kOk;
}

std::vector<double> scales_or_empty(const std::string& text) { return text.empty() ? std::vector<double>{} : parse_scales(text); }

}  // namespace

// --- library entry points ----------------------------------------------------

GradcheckReport run_gradcheck(const RunConfig& cfg, double eps, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  cfg.validate();
  const auto head_cfg = cfg.model_config().head;
  Rng rng(seed);
  auto head = init_head<double>(head_cfg, rng);
  const auto x = randn<double>({head_cfg.in_channels, cfg.height, cfg.width}, rng);
  LabelMap labels{cfg.height, cfg.width, std::vector<std::uint8_t>(cfg.height * cfg.width)};
  for (auto& l : labels.labels) l = static_cast<std::uint8_t>(rng.below(head_cfg.classes));

  auto loss_value = [&](const Tensor<double>&) {
    NoGradGuard guard;
    return cross_entropy(head_forward(x, head, true), labels).item();
  };
  cross_entropy(head_forward(x, head, true), labels).backward();

  GradcheckReport report;
  for (const auto& p : head.parameters()) {
    if (!p.trainable) continue;
    const auto analytic = p.tensor.grad();
    const auto numeric = finite_diff_grad<double>(loss_value, p.tensor, eps);
    const double rel = max_rel_error<double>(analytic, numeric.data(), kGradcheckFloor);
    double norm = 0;
    for (double g : analytic) norm = std::max(norm, std::abs(g));
    report.groups.push_back({p.name, p.tensor.numel(), rel, norm});
    report.worst = std::max(report.worst, rel);
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

namespace {
template <typename T>
EquivReport equiv_as(const RunConfig& cfg, std::size_t trials, double tolerance, std::uint64_t seed) {
  const auto head_cfg = cfg.model_config().head;
  EquivReport r;
  r.trials = trials;
  r.nodes = (cfg.height / cfg.downsample) * (cfg.width / cfg.downsample);
  Rng base(seed);
  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng = base.fork(t);
    const auto params = CoordGCNParams<T>::init(head_cfg.channels, head_cfg.coord, rng);
    const auto v = randn<T>({r.nodes, head_cfg.channels}, rng);
    const auto a = coord_message(v, params, MessageOrder::adjacency_first, cfg.scale_by_nodes);
    const auto b = coord_message(v, params, MessageOrder::factor_first, cfg.scale_by_nodes);
    const double rel = max_rel_error<T>(a.data(), b.data(), 0.0);
    const double e = std::isnan(rel) ? 0.0 : rel;
    r.worst_rel_error = std::max(r.worst_rel_error, e);
    if (tolerance == 0 ? e != 0 : e > tolerance) ++r.failures;
  }
  return r;
}
}  // namespace

EquivReport run_equiv(const RunConfig& cfg, std::size_t trials, double tolerance, std::uint64_t seed) {
  cfg.validate();
  if (trials == 0) throw ConfigError("--trials must be at least 1");
  if (!(tolerance >= 0)) throw ConfigError("--tolerance must be non-negative");
  return cfg.dtype == DType::f64 ? equiv_as<double>(cfg, trials, tolerance, seed)
                                 : equiv_as<float>(cfg, trials, tolerance, seed);
}

RunConfig default_equiv_config() {
  RunConfig c;
  c.dtype = DType::f64;
  c.channels = 32;
  c.height = 64;
  c.width = 64;
  c.downsample = 8;
  return c;
}

void configure_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

std::size_t thread_cap() {
  const char* env = std::getenv("DGCN_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) throw ConfigError(std::string("DGCN_THREADS must be a positive integer, got '") + env + "'");
  return static_cast<std::size_t>(v);
}

void write_pgm(const std::string& path, std::size_t height, std::size_t width, const std::vector<std::uint8_t>& pixels) {
  if (pixels.size() != height * width) throw ShapeError("PGM pixel count does not match " + std::to_string(height) + "x" + std::to_string(width));
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write " + path);
  os << "P5\n" << width << ' ' << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!os) throw FormatError("failed writing " + path);
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dual graph convolution toolkit: gradient checks, cost accounting and a toy segmentation task", "dgcn"};
  app.require_subcommand(1);

  ConfigArgs gc_cfg, cost_cfg, eq_cfg, tr_cfg, ev_cfg, in_cfg;
  DataArgs tr_data, ev_data, in_data;

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every head parameter gradient (f64)");
  add_config_options(gc, gc_cfg);
  double gc_eps = 1e-6, gc_tol = 1e-5;
  std::uint64_t gc_seed = 1;
  bool gc_corrupt = false;
  gc->add_option("--eps", gc_eps, "central-difference step")->capture_default_str();
  gc->add_option("--tolerance", gc_tol, "largest accepted relative error")->capture_default_str();
  gc->add_option("--seed", gc_seed, "seed for parameters, inputs and labels")->capture_default_str();
  gc->add_flag("--corrupt-backward", gc_corrupt)->group("");

  auto* cost = app.add_subcommand("cost", "analytic parameter and FLOP table");
  add_config_options(cost, cost_cfg);
  std::string cost_shape = "1x512x128x128", cost_order = "factor-first";
  bool cost_csv = false, cost_compare = false;
  cost->add_option("--input-shape", cost_shape, "BxCxHxW; C sets the head width D")->capture_default_str();
  cost->add_option("--order", cost_order, "coordinate message evaluation order")
      ->check(CLI::IsMember({"factor-first", "adjacency-first", "both"}))
      ->capture_default_str();
  cost->add_flag("--csv", cost_csv, "emit CSV instead of a text table");
  cost->add_flag("--paper-compare", cost_compare, "print ratios against the target figures");

  auto* eq = app.add_subcommand("equiv", "check that both coordinate message orders agree");
  add_config_options(eq, eq_cfg);
  std::size_t eq_trials = 20;
  double eq_tol = 1e-8;
  std::uint64_t eq_seed = 1;
  eq->add_option("--trials", eq_trials, "number of seeded trials")->capture_default_str();
  eq->add_option("--tolerance", eq_tol, "largest accepted relative difference (0 demands bit equality)")
      ->capture_default_str();
  eq->add_option("--seed", eq_seed)->capture_default_str();

  std::string variant, scales_text;
  std::optional<std::size_t> ohem, iterations;
  std::optional<std::uint64_t> seed;

  auto* tr = app.add_subcommand("train", "train on the toy task; writes checkpoint.dgcn and log.csv");
  add_config_options(tr, tr_cfg);
  add_data_options(tr, tr_data, false);
  std::string tr_out;
  tr->add_option("--out", tr_out, "output directory")->required();
  tr->add_option("--variant", variant, "baseline, coord, feat or both");
  tr->add_option("--ohem", ohem, "keep the K hardest pixels per image (0 = plain cross-entropy)");
  tr->add_option("--seed", seed, "training seed");
  tr->add_option("--iterations", iterations, "number of SGD steps");
  tr->add_option("--scales", scales_text, "stored in the checkpoint config for later eval/infer");

  auto* ev = app.add_subcommand("eval", "per-class IoU and mIoU of a checkpoint");
  add_data_options(ev, ev_data, true);
  std::string ev_ckpt;
  ev->add_option("--checkpoint", ev_ckpt, "DGCN1 checkpoint")->required();
  ev->add_option("--scales", scales_text, "comma-separated inference scales, e.g. 0.75,1,1.25");

  auto* in = app.add_subcommand("infer", "write predicted label maps as 8-bit PGM");
  add_data_options(in, in_data, true);
  std::string in_ckpt, in_out;
  in->add_option("--checkpoint", in_ckpt, "DGCN1 checkpoint")->required();
  in->add_option("--out", in_out, "output directory")->required();
  in->add_option("--scales", scales_text, "comma-separated inference scales");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gc) {
      auto cfg = build_config(gc_cfg, default_gradcheck_config());
      cfg.validate();
      return cmd_gradcheck(cfg, gc_eps, gc_tol, gc_seed, gc_corrupt, out);
    }
    if (*cost) return cmd_cost(build_config(cost_cfg, default_toy_config()), cost_shape, cost_order, cost_csv, cost_compare, out);
    if (*eq) return cmd_equiv(build_config(eq_cfg, default_equiv_config()), eq_trials, eq_tol, eq_seed, out);
    if (*tr) {
      auto cfg = build_config(tr_cfg, default_toy_config());
      if (!variant.empty()) cfg.variant = variant_from_string(variant);
      if (ohem) cfg.train.ohem_k = *ohem;
      if (seed) cfg.train.seed = *seed;
      if (iterations) cfg.train.iterations = *iterations;
      if (!scales_text.empty()) cfg.scales = parse_scales(scales_text);
      cfg.validate();
      return cfg.dtype == DType::f64 ? train_as<double>(cfg, tr_data, tr_out, out)
                                     : train_as<float>(cfg, tr_data, tr_out, out);
    }
    const bool is_eval = static_cast<bool>(*ev);
    const auto& ckpt_path = is_eval ? ev_ckpt : in_ckpt;
    if (!fs::exists(ckpt_path)) throw ConfigError("checkpoint " + ckpt_path + " does not exist");
    const auto ckpt = read_checkpoint(ckpt_path);
    const auto scales = scales_or_empty(scales_text);
    if (is_eval) {
      return ckpt.config.dtype == DType::f64 ? eval_as<double>(ckpt, ev_data, scales, out, err)
                                             : eval_as<float>(ckpt, ev_data, scales, out, err);
    }
    return ckpt.config.dtype == DType::f64 ? infer_as<double>(ckpt, in_data, scales, in_out, out, err)
                                           : infer_as<float>(ckpt, in_data, scales, in_out, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << '\n';
    return kUsage;
  } catch (const ShapeError& e) {
    err << "shape error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
}

}  // namespace dgcn::cli
