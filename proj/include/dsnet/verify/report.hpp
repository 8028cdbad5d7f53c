#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace dsnet::verify {

std::string_view tool_version();

/// One checked quantity. `comparison` is how `value` must relate to
/// `threshold` for the case to pass: one of "<", "<=", "==", ">=", ">".
struct ReportCase {
  std::string id;
  std::string metric;
  double value = 0;
  std::string comparison = "<=";
  double threshold = 0;
  bool pass = false;
};

/// Machine-readable result file. JSON object:
///   {"suite", "tool_version", "config_hash", "pass", "cases": [
///      {"id", "metric", "value", "comparison", "threshold", "pass"}, ...]}
struct Report {
  std::string suite;
  std::string config_hash;
  std::vector<ReportCase> cases;

  /// Appends a case, computing its pass flag from the comparison.
  const ReportCase& check(std::string id, std::string metric, double value, std::string comparison, double threshold);
  bool passed() const;

  std::string to_json() const;
  void write(const std::filesystem::path& path) const;
};

/// Empty when `text` is a well-formed report; otherwise the first problem.
std::string validate_report(std::string_view text);

}  // namespace dsnet::verify
