#include <dsnet/verify/report.hpp>

#include <dsnet/tensor.hpp>

#include <json.hpp>

#include <cmath>
#include <fstream>

namespace dsnet::verify {

namespace {

bool compare(double value, const std::string& op, double threshold) {
  if (op == "<") return value < threshold;
  if (op == "<=") return value <= threshold;
  if (op == "==") return value == threshold;
  if (op == ">=") return value >= threshold;
  if (op == ">") return value > threshold;
  throw UsageError("report: unknown comparison '" + op + "'");
}

// JSON has no NaN or infinity; those become null and count as failures.
nlohmann::ordered_json number(double v) { return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr); }

}  // namespace

std::string_view tool_version() { return DSNET_VERSION_STRING; }

const ReportCase& Report::check(std::string id, std::string metric, double value, std::string comparison,
                                double threshold) {
  const bool pass = compare(value, comparison, threshold);
  cases.push_back({std::move(id), std::move(metric), value, std::move(comparison), threshold, pass});
  return cases.back();
}

bool Report::passed() const {
  for (const auto& c : cases)
    if (!c.pass) return false;
  return true;
}

std::string Report::to_json() const {
  nlohmann::ordered_json j;
  j["suite"] = suite;
  j["tool_version"] = tool_version();
  j["config_hash"] = config_hash;
  j["pass"] = passed();
  j["cases"] = nlohmann::ordered_json::array();
  for (const auto& c : cases)
    j["cases"].push_back({{"id", c.id},
                          {"metric", c.metric},
                          {"value", number(c.value)},
                          {"comparison", c.comparison},
                          {"threshold", number(c.threshold)},
                          {"pass", c.pass}});
  return j.dump(2) + "\n";
}

void Report::write(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw UsageError("report: cannot open " + path.string() + " for writing");
  out << to_json();
  if (!out) throw UsageError("report: write failed for " + path.string());
}

std::string validate_report(std::string_view text) {
  const auto j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) return "not valid JSON";
  if (!j.is_object()) return "top level is not an object";
  for (const char* key : {"suite", "tool_version", "config_hash"})
    if (!j.contains(key) || !j[key].is_string()) return std::string("missing string field '") + key + "'";
  if (!j.contains("pass") || !j["pass"].is_boolean()) return "missing boolean field 'pass'";
  if (!j.contains("cases") || !j["cases"].is_array()) return "missing array field 'cases'";
  bool all = true;
  for (const auto& c : j["cases"]) {
    if (!c.is_object()) return "case is not an object";
    for (const char* key : {"id", "metric", "comparison"})
      if (!c.contains(key) || !c[key].is_string()) return std::string("case missing string field '") + key + "'";
    for (const char* key : {"value", "threshold"})
      if (!c.contains(key) || !(c[key].is_number() || c[key].is_null()))
        return std::string("case missing numeric field '") + key + "'";
    if (!c.contains("pass") || !c["pass"].is_boolean()) return "case missing boolean field 'pass'";
    all = all && c["pass"].get<bool>();
  }
  if (all != j["pass"].get<bool>()) return "top-level pass disagrees with the cases";
  return {};
}

}  // namespace dsnet::verify
