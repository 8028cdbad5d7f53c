#pragma once

#include <dsnet/tensor.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace dsnet {

struct AuditEntry {
  std::string name;
  Index params = 0;
  std::uint64_t macs = 0;
};

/// Learnable-scalar count and analytic multiply-accumulate count of one
/// forward pass at a given input size. FLOPs are reported as 2 x MACs.
struct AuditReport {
  Index height = 0;
  Index width = 0;
  std::vector<AuditEntry> entries;

  Index parameter_count() const {
    Index n = 0;
    for (const auto& e : entries) n += e.params;
    return n;
  }
  std::uint64_t macs() const {
    std::uint64_t n = 0;
    for (const auto& e : entries) n += e.macs;
    return n;
  }
  std::uint64_t flops() const { return 2 * macs(); }

  void add(std::string name, Index params, std::uint64_t macs) { entries.push_back({std::move(name), params, macs}); }
  void append(const std::string& prefix, const AuditReport& other) {
    for (const auto& e : other.entries) entries.push_back({prefix + "." + e.name, e.params, e.macs});
  }
};

/// MACs of the attention score product Q K^T over `tokens` tokens of total
/// width `width` (summed over heads). This is the term quadratic in tokens.
inline std::uint64_t attention_score_macs(Index tokens, Index width) {
  const auto l = static_cast<std::uint64_t>(tokens);
  return l * l * static_cast<std::uint64_t>(width);
}

}  // namespace dsnet
