// dsnet: model summaries, verification suites, toy training, benchmarks,
// FPN audits and checkpoint export/import from one binary.

#include "commands.hpp"

#include <dsnet/checkpoint.hpp>

#include <CLI11.hpp>
#include <yaml-cpp/yaml.h>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using namespace dsnet;

struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string output;
  std::string variant, ablation, insertion;
  std::optional<double> alpha;
  std::optional<bool> align;
  std::vector<Index> depths, channels, heads;
  std::optional<Index> num_classes, out_channels, extra_levels;
};

/// Config file first, flags on top; the merged document goes through the
/// same parser so flags get the same validation and diagnostics.
RunConfig resolve_config(const Overrides& o) {
  YAML::Node doc(YAML::NodeType::Map);
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path);
    if (!in) throw ConfigError("config: cannot open " + o.config_path);
    std::stringstream ss;
    ss << in.rdbuf();
    try {
      doc = YAML::Load(ss.str());
    } catch (const YAML::Exception& e) {
      throw ConfigError(o.config_path + ": " + e.what());
    }
    if (doc.IsNull()) doc = YAML::Node(YAML::NodeType::Map);
    if (!doc.IsMap()) throw ConfigError(o.config_path + ": top level must be a mapping of keys to values");
  }
  if (!o.variant.empty()) doc["variant"] = o.variant;
  if (!o.ablation.empty()) doc["ablation"] = o.ablation;
  if (!o.insertion.empty()) doc["insertion"] = o.insertion;
  if (o.alpha) doc["alpha"] = *o.alpha;
  if (o.align) doc["align"] = *o.align;
  if (!o.depths.empty()) doc["depths"] = o.depths;
  if (!o.channels.empty()) doc["channels"] = o.channels;
  if (!o.heads.empty()) doc["heads"] = o.heads;
  if (o.num_classes) doc["num_classes"] = *o.num_classes;
  if (o.out_channels) doc["out_channels"] = *o.out_channels;
  if (o.extra_levels) doc["extra_levels"] = *o.extra_levels;
  YAML::Emitter emitter;
  emitter << doc;
  return parse_config(emitter.c_str());
}

/// --seed, then the config file, then DSNET_SEED, then 0.
std::uint64_t resolve_seed(const Overrides& o, const RunConfig& config) {
  if (o.seed) return *o.seed;
  if (config.seed) return *config.seed;
  if (const char* env = std::getenv("DSNET_SEED")) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used == std::string(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw UsageError(std::string("DSNET_SEED must be a non-negative integer, got '") + env + "'");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DS-Net dual-stream backbone: audits, verification, toy training, benchmarks and checkpoints", "dsnet"};
  app.require_subcommand(1, 1);
  app.fallthrough();
  app.set_version_flag("--version", std::string(verify::tool_version()));

  Overrides o;
  app.add_option("-c,--config", o.config_path, "YAML config file (flags override its keys)")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "Seed (default: config seed, then DSNET_SEED, then 0)");
  app.add_option("-o,--output", o.output, "Write a JSON report to this path");
  app.add_option("--variant", o.variant, "Model variant: T, S, B or custom");
  app.add_option("--alpha", o.alpha, "Fraction of channels in the global stream");
  app.add_flag("--align,!--no-align", o.align, "Enable inter-scale alignment (starred variants)");
  app.add_option("--ablation", o.ablation, "full, no_local, no_global, no_g2l, no_l2g or no_align");
  app.add_option("--depths", o.depths, "Blocks per stage (4 integers)")->expected(4);
  app.add_option("--channels", o.channels, "Channels per stage (4 integers)")->expected(4);
  app.add_option("--heads", o.heads, "Attention heads per stage (4 integers)")->expected(4);
  app.add_option("--num-classes", o.num_classes, "Classifier outputs");
  app.add_option("--insertion", o.insertion, "FPN insertion: none, last, lateral, lateral_rev, lateral_extra");
  app.add_option("--out-channels", o.out_channels, "FPN width");
  app.add_option("--extra-levels", o.extra_levels, "FPN extra pyramid levels");

  cli::SummaryOptions summary;
  auto* summary_cmd = app.add_subcommand("summary", "Per-stage layout, parameter count and analytic FLOPs");
  summary_cmd->add_option("--size", summary.size, "Input side length (multiple of 32)")->capture_default_str();

  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "Finite-difference checks of a block and a reduced model");

  cli::OracleOptions oracles;
  auto* oracles_cmd = app.add_subcommand("oracles", "Fast kernels against naive-loop references");
  oracles_cmd->add_option("--cases", oracles.cases, "Random cases per kernel")->capture_default_str();

  cli::ToyOptions toy;
  auto* toy_cmd = app.add_subcommand("train-toy", "Overfit a reduced model on a synthetic dataset");
  toy_cmd->add_option("--images", toy.images, "Dataset size")->capture_default_str();
  toy_cmd->add_option("--classes", toy.classes, "Number of classes")->capture_default_str();
  toy_cmd->add_option("--size", toy.size, "Image side length")->capture_default_str();
  toy_cmd->add_option("--noise", toy.noise, "Per-pixel noise standard deviation")->capture_default_str();
  toy_cmd->add_option("--epochs", toy.epochs, "Maximum epochs")->capture_default_str();
  toy_cmd->add_option("--batch", toy.batch_size, "Batch size")->capture_default_str();
  toy_cmd->add_option("--lr", toy.lr, "Peak learning rate (cosine decay)")->capture_default_str();
  toy_cmd->add_option("--target", toy.target, "Train accuracy that counts as success")->capture_default_str();
  toy_cmd->add_flag("!--no-early-stop", toy.early_stop, "Run every epoch even after reaching the target");

  cli::BenchOptions bench;
  auto* bench_cmd = app.add_subcommand("bench", "Throughput, per-block timing and attention cost");
  bench_cmd->add_option("--size", bench.size, "Input side length (multiple of 32)")->capture_default_str();
  bench_cmd->add_option("--batch", bench.batch, "Images per forward pass")->capture_default_str();
  bench_cmd->add_option("--iterations", bench.iterations, "Timed iterations (0 allowed)")->capture_default_str();
  bench_cmd->add_option("--warmup", bench.warmup, "Untimed warmup iterations")->capture_default_str();
  bench_cmd->add_option("--threads", bench.threads, "Worker threads for the throughput run")->capture_default_str();
  bench_cmd->add_flag("!--no-per-block", bench.per_block, "Skip per-block timing");
  bench_cmd->add_flag("!--no-attention", bench.attention, "Skip the attention grid comparison");
  bench_cmd->add_flag("--alpha-sweep", bench.alpha_sweep, "Also measure alpha in {0, 0.25, 0.5, 0.75, 1}");

  cli::FpnAuditOptions fpn;
  auto* fpn_cmd = app.add_subcommand("fpn-audit", "Parameter and MAC counts of the DS-FPN neck");
  fpn_cmd->add_option("--size", fpn.size, "Input side length (multiple of 32)")->capture_default_str();
  fpn_cmd->add_flag("--all", fpn.all, "Audit every insertion mode and check their ordering");

  cli::ExportOptions exp;
  auto* export_cmd = app.add_subcommand("export", "Write freshly initialized parameters to a checkpoint");
  export_cmd->add_option("path", exp.path, "Checkpoint file")->required();
  export_cmd->add_flag("--f64", exp.f64, "Store double-precision parameters");

  cli::ImportOptions imp;
  std::string reexport;
  auto* import_cmd = app.add_subcommand("import", "Load a checkpoint into the configured model");
  import_cmd->add_option("path", imp.path, "Checkpoint file")->required();
  import_cmd->add_option("--reexport", reexport, "Write the imported parameters to this path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    const auto used = app.get_subcommands();
    std::cerr << (used.empty() ? app.help() : used.front()->help() + "\nGlobal options: dsnet --help\n");
    return cli::kUsage;
  }

  try {
    cli::Context ctx;
    ctx.config = resolve_config(o);
    ctx.seed = resolve_seed(o, ctx.config);
    ctx.config.seed = ctx.seed;
    if (!o.output.empty()) ctx.output = o.output;
    auto& out = std::cout;
    if (summary_cmd->parsed()) return cli::summary(ctx, summary, out);
    if (gradcheck_cmd->parsed()) return cli::gradcheck(ctx, out);
    if (oracles_cmd->parsed()) return cli::oracles(ctx, oracles, out);
    if (toy_cmd->parsed()) return cli::train_toy(ctx, toy, out);
    if (bench_cmd->parsed()) return cli::bench(ctx, bench, out);
    if (fpn_cmd->parsed()) return cli::fpn_audit(ctx, fpn, out);
    if (export_cmd->parsed()) return cli::export_checkpoint(ctx, exp, out);
    if (!reexport.empty()) imp.reexport = reexport;
    return cli::import_checkpoint(ctx, imp, out);
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error (" << to_string(e.code()) << "): " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return cli::kCheckFailed;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cli::kUsage;
  }
}
