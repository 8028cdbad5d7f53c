#pragma once

#include <dsnet/verify/gradcheck.hpp>
#include <dsnet/verify/report.hpp>

#include <cstdint>

namespace dsnet::verify {

struct GradCheckSuiteOptions {
  GradCheckOptions check{};
  /// Entries probed per tensor in the end-to-end model; 0 probes all.
  Index model_entries_per_tensor = 6;
  std::uint64_t seed = 37;
};

/// Finite-difference checks of a full DS-Block (alpha 0.5, alignment on,
/// 16 channels on a 16x16 grid) and of a reduced end-to-end model at 64x64.
/// One case per parameter tensor plus one summary case per model.
Report gradcheck_suite(const GradCheckSuiteOptions& options = {});

/// Fast kernels against the naive-loop oracles: depthwise conv, multi-head
/// self-attention and co-attention, `cases` random f64 instances each. One
/// case per kernel holding the worst absolute difference.
Report oracle_suite(int cases = 100, std::uint64_t seed = 1, double tolerance = 1e-10);

}  // namespace dsnet::verify
