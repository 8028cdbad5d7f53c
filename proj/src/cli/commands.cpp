#include "commands.hpp"

#include <dsnet/checkpoint.hpp>
#include <dsnet/verify/suites.hpp>
#include <dsnet/verify/toy.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <thread>

namespace dsnet::cli {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string millions(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3fM", v / 1e6);
  return buf;
}

std::string giga(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3fG", v / 1e9);
  return buf;
}

void check_size(Index size) {
  if (size < ModelConfig::kGlobalStride || size % ModelConfig::kGlobalStride != 0)
    throw UsageError("input size must be a positive multiple of 32, got " + std::to_string(size));
}

int finish(const Context& ctx, verify::Report report, std::ostream& out) {
  const bool ok = report.passed();
  emit(ctx, std::move(report), out);
  out << (ok ? "PASS" : "FAIL") << "\n";
  return ok ? kOk : kCheckFailed;
}

void print_cases(const verify::Report& report, std::ostream& out) {
  for (const auto& c : report.cases)
    out << "  " << std::left << std::setw(52) << c.id << std::setw(14) << c.metric << std::setw(13)
        << std::setprecision(4) << c.value << c.comparison << " " << c.threshold << "  " << (c.pass ? "ok" : "FAIL")
        << "\n";
}

void print_stage_table(const ModelConfig& m, Index size, std::ostream& out) {
  out << "stage  depth  channels  heads  head_dim  grid     global\n";
  for (int s = 0; s < 4; ++s) {
    const auto& st = m.stages[s];
    const auto b = m.block_config(s);
    const Index grid = size / st.stride, global = size / ModelConfig::kGlobalStride;
    const std::string head_dim = b.has_attention() ? std::to_string(b.global_channels() / st.heads) : "-";
    out << std::left << std::setw(7) << s + 1 << std::setw(7) << st.depth << std::setw(10) << st.channels
        << std::setw(7) << st.heads << std::setw(10) << head_dim << std::setw(9)
        << (std::to_string(grid) + "x" + std::to_string(grid))
        << (std::to_string(global) + "x" + std::to_string(global)) << "\n";
  }
}

template <typename Scalar>
int import_as(const Context& ctx, const Checkpoint& ckpt, const ImportOptions& opt, std::ostream& out) {
  Model<Scalar> model(ctx.config.model, ctx.seed);
  const auto params = model.parameters();
  restore(ckpt, params);
  out << "imported " << ckpt.size() << " tensors (" << count_scalars(params) << " scalars, "
      << to_string(dtype_of<Scalar>()) << ") from " << opt.path.string() << "\n";
  if (opt.reexport) {
    write_checkpoint(*opt.reexport, snapshot(params));
    out << "re-exported to " << opt.reexport->string() << "\n";
  }
  return kOk;
}

template <typename Scalar>
int export_as(const Context& ctx, const ExportOptions& opt, std::ostream& out) {
  Model<Scalar> model(ctx.config.model, ctx.seed);
  const auto params = model.parameters();
  write_checkpoint(opt.path, snapshot(params));
  out << "exported " << params.size() << " tensors (" << count_scalars(params) << " scalars, "
      << to_string(dtype_of<Scalar>()) << ") to " << opt.path.string() << "\n";
  return kOk;
}

/// Mean wall time of `iterations` calls of `fn`, after `warmup` untimed calls.
template <typename Fn>
double mean_seconds(Index warmup, Index iterations, Fn&& fn) {
  for (Index i = 0; i < warmup; ++i) fn();
  if (iterations == 0) return 0;
  const auto t0 = Clock::now();
  for (Index i = 0; i < iterations; ++i) fn();
  return seconds_since(t0) / static_cast<double>(iterations);
}

struct Throughput {
  double images_per_second = 0;
  double seconds_per_iteration = 0;
};

Throughput measure_throughput(const Model<float>& model, const Tensor<float>& images, const BenchOptions& opt) {
  auto run = [&] { model.forward(constant(images)); };
  Throughput t;
  if (opt.threads <= 1) {
    NoGradGuard no_grad;
    t.seconds_per_iteration = mean_seconds(opt.warmup, opt.iterations, run);
  } else {
    // Each worker runs whole forward passes; the iterations are split between them.
    auto worker = [&](Index count) {
      NoGradGuard no_grad;
      for (Index i = 0; i < count; ++i) run();
    };
    auto parallel = [&](Index total) {
      std::vector<std::thread> pool;
      for (int w = 0; w < opt.threads; ++w) {
        const Index share = total / opt.threads + (w < total % opt.threads ? 1 : 0);
        pool.emplace_back(worker, share);
      }
      for (auto& th : pool) th.join();
    };
    parallel(opt.warmup);
    if (opt.iterations > 0) {
      const auto t0 = Clock::now();
      parallel(opt.iterations);
      t.seconds_per_iteration = seconds_since(t0) / static_cast<double>(opt.iterations);
    }
  }
  if (t.seconds_per_iteration > 0) t.images_per_second = static_cast<double>(images.dim(0)) / t.seconds_per_iteration;
  return t;
}

}  // namespace

void emit(const Context& ctx, verify::Report report, std::ostream& out) {
  report.config_hash = hex_hash(config_hash(ctx.config));
  if (!ctx.output) return;
  report.write(*ctx.output);
  out << "report written to " << ctx.output->string() << "\n";
}

int summary(const Context& ctx, const SummaryOptions& opt, std::ostream& out) {
  check_size(opt.size);
  const auto& m = ctx.config.model;
  Model<float> model(m, ctx.seed);
  const auto audit = model.audit(opt.size, opt.size);
  out << "DS-Net " << m.variant << (m.align ? " with alignment" : "") << ", alpha " << m.alpha << ", ablation "
      << to_string(m.ablation) << ", " << m.num_classes << " classes, input " << opt.size << "x" << opt.size
      << ", seed " << ctx.seed << ", config " << hex_hash(config_hash(ctx.config)) << "\n";
  print_stage_table(m, opt.size, out);
  const auto enumerated = count_scalars(model.parameters());
  out << "params  " << audit.parameter_count() << " (" << millions(static_cast<double>(audit.parameter_count()))
      << ")\n"
      << "MACs    " << audit.macs() << " (" << giga(static_cast<double>(audit.macs())) << ")\n"
      << "FLOPs   " << audit.flops() << " (" << giga(static_cast<double>(audit.flops())) << ", 2 x MACs)\n";

  verify::Report report;
  report.suite = "summary";
  report.check("params.enumerated", "params", static_cast<double>(audit.parameter_count()), "==",
               static_cast<double>(enumerated));
  report.check("macs", "macs", static_cast<double>(audit.macs()), ">", 0);
  report.check("flops", "flops", static_cast<double>(audit.flops()), "==", 2.0 * static_cast<double>(audit.macs()));
  for (int s = 0; s < 4; ++s)
    report.check("stage" + std::to_string(s + 1) + ".depth", "blocks",
                  static_cast<double>(model.stages()[static_cast<std::size_t>(s)].size()), "==",
                  static_cast<double>(m.stages[s].depth));
  return finish(ctx, std::move(report), out);
}

int gradcheck(const Context& ctx, std::ostream& out) {
  verify::GradCheckSuiteOptions opt;
  opt.seed = ctx.seed;
  out << "finite-difference gradient check (f64, h=" << opt.check.step << ", tol=" << opt.check.tolerance << ")\n";
  const auto t0 = Clock::now();
  auto report = verify::gradcheck_suite(opt);
  print_cases(report, out);
  out << "elapsed " << std::fixed << std::setprecision(1) << seconds_since(t0) << " s\n" << std::defaultfloat;
  return finish(ctx, std::move(report), out);
}

int oracles(const Context& ctx, const OracleOptions& opt, std::ostream& out) {
  if (opt.cases < 1) throw UsageError("--cases must be positive");
  out << "naive-loop oracles, " << opt.cases << " random f64 cases per kernel\n";
  auto report = verify::oracle_suite(opt.cases, ctx.seed);
  print_cases(report, out);
  return finish(ctx, std::move(report), out);
}

int train_toy(const Context& ctx, const ToyOptions& opt, std::ostream& out) {
  verify::ToyDatasetConfig dc;
  dc.images = opt.images;
  dc.classes = opt.classes;
  dc.height = dc.width = opt.size;
  dc.noise = opt.noise;
  dc.seed = ctx.seed;
  const auto data = verify::make_toy_dataset(dc);
  const auto model = verify::reduced_config(ctx.config.model, opt.classes);

  verify::ToyRunConfig run;
  run.epochs = opt.epochs;
  run.batch_size = opt.batch_size;
  run.optimizer.lr = opt.lr;
  run.target_accuracy = opt.target;
  run.early_stop = opt.early_stop;
  run.seed = ctx.seed;
  out << "toy overfit: " << opt.images << " images, " << opt.classes << " classes, " << opt.size << "x" << opt.size
      << ", depths 1/1/1/1, alpha " << model.alpha << ", lr " << opt.lr << "\n"
      << "epoch  loss         accuracy\n";
  const auto result = verify::overfit_toy(model, data, run, [&](const verify::EpochRecord& e) {
    out << std::left << std::setw(7) << e.epoch << std::setw(13) << std::setprecision(6) << e.loss << e.accuracy
        << std::endl;
  });
  verify::Report report;
  report.suite = "train-toy";
  if (result.diverged) out << "diverged at epoch " << result.diverged_epoch << "\n";
  report.check("diverged_epoch", "epoch", static_cast<double>(result.diverged_epoch), "==", -1);
  report.check("final_accuracy", "accuracy", result.final_accuracy, ">=", opt.target);
  report.check("epochs_used", "epochs", static_cast<double>(result.curve.size()), "<=", static_cast<double>(opt.epochs));
  return finish(ctx, std::move(report), out);
}

int bench(const Context& ctx, const BenchOptions& opt, std::ostream& out) {
  check_size(opt.size);
  if (opt.iterations < 0 || opt.warmup < 0 || opt.batch < 1 || opt.threads < 1)
    throw UsageError("bench: iterations and warmup must be >= 0, batch and threads >= 1");
  std::mt19937_64 rng(ctx.seed);
  verify::Report report;
  report.suite = "bench";

  auto run_model = [&](const ModelConfig& m, const std::string& tag) {
    Model<float> model(m, ctx.seed);
    const auto images = random_uniform<float>({opt.batch, m.in_channels, opt.size, opt.size}, rng);
    const auto t = measure_throughput(model, images, opt);
    out << tag << "images/s " << std::setprecision(5) << t.images_per_second << "  (" << opt.iterations
        << " timed iterations after " << opt.warmup << " warmup, batch " << opt.batch << ", threads " << opt.threads
        << ")\n";
    return std::pair{std::move(model), t};
  };

  out << "bench: DS-Net " << ctx.config.model.variant << (ctx.config.model.align ? "*" : "") << " at " << opt.size
      << "x" << opt.size << "\n";
  auto [model, t] = run_model(ctx.config.model, "");
  report.check("timed_iterations", "count", static_cast<double>(opt.iterations), ">=", 0);
  report.check("images_per_second", "img/s", t.images_per_second, ">=", 0);

  if (opt.per_block) {
    NoGradGuard no_grad;
    out << "per-block mean forward time (ms)\n";
    for (std::size_t s = 0; s < model.stages().size(); ++s) {
      const auto& st = ctx.config.model.stages[s];
      const auto x = constant(random_uniform<float>({opt.batch, st.channels, opt.size / st.stride,
                                                     opt.size / st.stride}, rng));
      for (std::size_t b = 0; b < model.stages()[s].size(); ++b) {
        const auto& block = model.stages()[s][b];
        const double sec = mean_seconds(opt.warmup, opt.iterations, [&] { block.forward(x); });
        out << "  stages." << s << ".blocks." << b << "  " << std::fixed << std::setprecision(3) << sec * 1e3 << "\n"
            << std::defaultfloat;
      }
    }
  }

  if (opt.attention) {
    // Stage-1 global stream: fixed coarse grid versus attention at full stage resolution.
    const auto b = ctx.config.model.block_config(0);
    if (b.has_attention()) {
      const Index width = b.global_channels();
      const Index fixed = (opt.size / ModelConfig::kGlobalStride) * (opt.size / ModelConfig::kGlobalStride);
      const Index full = (opt.size / ctx.config.model.stages[0].stride) * (opt.size / ctx.config.model.stages[0].stride);
      const auto fixed_macs = attention_score_macs(fixed, width), full_macs = attention_score_macs(full, width);
      const double ratio = static_cast<double>(full_macs) / static_cast<double>(fixed_macs);
      const double expected = std::pow(static_cast<double>(full) / static_cast<double>(fixed), 2.0);
      Initializer init(ctx.seed);
      const auto wq = init.weight<float>({width, width}), wk = init.weight<float>({width, width}),
                 wv = init.weight<float>({width, width});
      NoGradGuard no_grad;
      auto time_attention = [&](Index tokens) {
        const auto x = constant(random_uniform<float>({1, tokens, width}, rng));
        return mean_seconds(std::min<Index>(opt.warmup, 1), opt.iterations,
                            [&] { multi_head_attention(x, wq, wk, wv, b.heads); });
      };
      const double t_fixed = time_attention(fixed), t_full = time_attention(full);
      out << "attention score MACs (stage 1, width " << width << "): " << fixed << " tokens " << fixed_macs << ", "
          << full << " tokens " << full_macs << ", ratio " << std::setprecision(10) << ratio << " = (" << full << "/"
          << fixed << ")^2\n"
          << "attention time (ms): fixed grid " << std::setprecision(4) << t_fixed * 1e3 << ", full resolution "
          << t_full * 1e3 << "\n";
      report.check("attention.score_mac_ratio", "ratio", ratio, "==", expected);
    }
  }

  if (opt.alpha_sweep) {
    out << "alpha sweep\n";
    double previous = 0;
    int rises = 0;
    for (double alpha : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      auto m = ctx.config.model;
      m.alpha = alpha;
      std::ostringstream tag;
      tag << "  alpha " << alpha << "  ";
      const auto [unused, r] = run_model(m, tag.str());
      if (alpha > 0 && r.images_per_second > previous) ++rises;
      previous = r.images_per_second;
    }
    // The reference trend is a monotone decrease in alpha.
    if (opt.iterations > 0) report.check("alpha_sweep.throughput_rises", "count", rises, "==", 0);
  }
  return finish(ctx, std::move(report), out);
}

int fpn_audit(const Context& ctx, const FpnAuditOptions& opt, std::ostream& out) {
  check_size(opt.size);
  const auto& m = ctx.config.model;
  Model<float> backbone(m, ctx.seed);
  verify::Report report;
  report.suite = "fpn-audit";
  auto audit_one = [&](Insertion ins) {
    auto cfg = ctx.config.neck;
    cfg.insertion = ins;
    DSFpn<float> neck(cfg, m, ctx.seed);
    const auto a = dsnet::fpn_audit(neck, backbone, opt.size, opt.size);
    out << std::left << std::setw(15) << to_string(ins) << std::setw(8) << neck.block_count() << std::setw(12)
        << millions(static_cast<double>(a.neck.parameter_count())) << std::setw(12)
        << giga(static_cast<double>(a.neck.macs())) << std::setw(12)
        << millions(static_cast<double>(a.total.parameter_count())) << giga(static_cast<double>(a.total.macs()))
        << "\n";
    report.check(std::string(to_string(ins)) + ".params.enumerated", "params",
                 static_cast<double>(a.neck.parameter_count()), "==",
                 static_cast<double>(count_scalars(neck.parameters())));
    return a.neck.parameter_count();
  };
  out << "DS-FPN over DS-Net " << m.variant << (m.align ? "*" : "") << ", out_channels " << ctx.config.neck.out_channels
      << ", " << ctx.config.neck.extra_levels << " extra levels, input " << opt.size << "x" << opt.size << "\n"
      << "insertion      blocks  neck        neck MACs   +backbone   +backbone MACs\n";
  if (!opt.all) {
    audit_one(ctx.config.neck.insertion);
    return finish(ctx, std::move(report), out);
  }
  const Index none = audit_one(Insertion::none);
  audit_one(Insertion::last);
  const Index rev = audit_one(Insertion::lateral_rev);
  const Index lateral = audit_one(Insertion::lateral);
  const Index extra = audit_one(Insertion::lateral_extra);
  const Index oc = ctx.config.neck.out_channels;
  Index closed = 0;
  for (const auto& st : m.stages) closed += st.channels * oc + oc;
  closed += (4 + ctx.config.neck.extra_levels) * (9 * oc * oc + oc);
  report.check("none.params.closed_form", "params", static_cast<double>(none), "==", static_cast<double>(closed));
  report.check("order.none<lateral_rev", "params", static_cast<double>(none), "<", static_cast<double>(rev));
  report.check("order.lateral_rev<lateral", "params", static_cast<double>(rev), "<", static_cast<double>(lateral));
  report.check("order.lateral<lateral_extra", "params", static_cast<double>(lateral), "<",
               static_cast<double>(extra));
  const double delta = static_cast<double>(extra - none) / 1e6;
  out << "lateral_extra - none = " << millions(static_cast<double>(extra - none)) << " (reference 5.60M +-30%)\n";
  report.check("delta.extra_minus_none.low", "Mparams", delta, ">=", 5.60 * 0.7);
  report.check("delta.extra_minus_none.high", "Mparams", delta, "<=", 5.60 * 1.3);
  return finish(ctx, std::move(report), out);
}

int export_checkpoint(const Context& ctx, const ExportOptions& opt, std::ostream& out) {
  return opt.f64 ? export_as<double>(ctx, opt, out) : export_as<float>(ctx, opt, out);
}

int import_checkpoint(const Context& ctx, const ImportOptions& opt, std::ostream& out) {
  const auto ckpt = read_checkpoint(opt.path);
  const bool f64 = !ckpt.empty() && ckpt.front().dtype() == DType::f64;
  return f64 ? import_as<double>(ctx, ckpt, opt, out) : import_as<float>(ctx, ckpt, opt, out);
}

}  // namespace dsnet::cli
