#pragma once

#include <dsnet/config_io.hpp>
#include <dsnet/verify/report.hpp>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

namespace dsnet::cli {

/// Process exit codes. Checkpoint failures exit with their CheckpointErrc value.
enum Exit : int { kOk = 0, kCheckFailed = 1, kUsage = 2 };

struct Context {
  RunConfig config;
  std::uint64_t seed = 0;
  /// Report file to write, when requested.
  std::optional<std::filesystem::path> output;
};

/// Writes the report when an output path is set, stamped with the config hash.
void emit(const Context& ctx, verify::Report report, std::ostream& out);

struct SummaryOptions {
  Index size = 224;
};
int summary(const Context& ctx, const SummaryOptions& opt, std::ostream& out);

int gradcheck(const Context& ctx, std::ostream& out);

struct OracleOptions {
  int cases = 100;
};
int oracles(const Context& ctx, const OracleOptions& opt, std::ostream& out);

struct ToyOptions {
  Index images = 100;
  Index classes = 10;
  Index size = 64;
  double noise = 1.0;
  Index epochs = 200;
  Index batch_size = 20;
  double lr = 1e-3;
  double target = 0.99;
  bool early_stop = true;
};
int train_toy(const Context& ctx, const ToyOptions& opt, std::ostream& out);

struct BenchOptions {
  Index size = 224;
  Index batch = 1;
  Index iterations = 20;
  Index warmup = 10;
  int threads = 1;
  bool per_block = true;
  bool attention = true;
  bool alpha_sweep = false;
};
int bench(const Context& ctx, const BenchOptions& opt, std::ostream& out);

struct FpnAuditOptions {
  Index size = 224;
  /// Audit every insertion mode and check the ordering across them.
  bool all = false;
};
int fpn_audit(const Context& ctx, const FpnAuditOptions& opt, std::ostream& out);

struct ExportOptions {
  std::filesystem::path path;
  bool f64 = false;
};
int export_checkpoint(const Context& ctx, const ExportOptions& opt, std::ostream& out);

struct ImportOptions {
  std::filesystem::path path;
  /// Write the imported parameters back out, for round-trip checks.
  std::optional<std::filesystem::path> reexport;
};
int import_checkpoint(const Context& ctx, const ImportOptions& opt, std::ostream& out);

}  // namespace dsnet::cli
