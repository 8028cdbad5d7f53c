#include <dsnet/config_io.hpp>

#include <yaml-cpp/yaml.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace dsnet {

namespace {

const std::set<std::string> kKeys = {
    "variant", "alpha",    "align",    "depths",       "channels",  "heads",        "num_classes",
    "seed",    "ablation", "expansion_ratio", "out_channels", "insertion", "extra_levels"};

template <typename T>
T scalar(const YAML::Node& node, const std::string& key) {
  if (!node.IsScalar()) throw ConfigError("config key '" + key + "': expected a scalar value");
  try {
    return node.as<T>();
  } catch (const YAML::Exception&) {
    throw ConfigError("config key '" + key + "': cannot parse '" + node.Scalar() + "'");
  }
}

std::array<Index, 4> four(const YAML::Node& node, const std::string& key) {
  if (!node.IsSequence() || node.size() != 4) throw ConfigError("config key '" + key + "': expected a list of 4 integers");
  std::array<Index, 4> out{};
  for (std::size_t i = 0; i < 4; ++i) out[i] = scalar<Index>(node[i], key);
  return out;
}

std::string join(const std::array<StageConfig, 4>& stages, Index StageConfig::*field) {
  std::string s = "[";
  for (std::size_t i = 0; i < 4; ++i) s += (i ? ", " : "") + std::to_string(stages[i].*field);
  return s + "]";
}

}  // namespace

RunConfig parse_config(std::string_view yaml) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(yaml));
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  RunConfig rc;
  if (root.IsNull()) return rc;
  if (!root.IsMap()) throw ConfigError("config: top level must be a mapping of keys to values");
  for (const auto& kv : root) {
    const auto key = kv.first.as<std::string>();
    if (!kKeys.count(key)) throw ConfigError("config key '" + key + "': unknown key");
  }

  auto& m = rc.model;
  const bool align = root["align"] ? scalar<bool>(root["align"], "align") : false;
  const auto variant = root["variant"] ? scalar<std::string>(root["variant"], "variant") : std::string("T");
  try {
    m = ModelConfig::preset(variant == "custom" ? "T" : variant, align);
  } catch (const ConfigError& e) {
    throw ConfigError("config key 'variant': " + std::string(e.what()));
  }
  m.variant = variant;

  const std::pair<const char*, Index StageConfig::*> lists[] = {
      {"depths", &StageConfig::depth}, {"channels", &StageConfig::channels}, {"heads", &StageConfig::heads}};
  for (const auto& [key, field] : lists) {
    if (!root[key]) continue;
    const auto v = four(root[key], key);
    for (std::size_t s = 0; s < 4; ++s) {
      if (m.stages[s].*field != v[s]) m.variant = "custom";
      m.stages[s].*field = v[s];
    }
  }
  if (root["alpha"]) m.alpha = scalar<double>(root["alpha"], "alpha");
  if (root["num_classes"]) m.num_classes = scalar<Index>(root["num_classes"], "num_classes");
  if (root["expansion_ratio"]) m.expansion_ratio = scalar<Index>(root["expansion_ratio"], "expansion_ratio");
  if (root["ablation"]) {
    try {
      m.ablation = parse_ablation(scalar<std::string>(root["ablation"], "ablation"));
    } catch (const ConfigError& e) {
      throw ConfigError("config key 'ablation': " + std::string(e.what()));
    }
  }
  if (root["seed"]) rc.seed = scalar<std::uint64_t>(root["seed"], "seed");

  auto& n = rc.neck;
  if (root["out_channels"]) n.out_channels = scalar<Index>(root["out_channels"], "out_channels");
  if (root["extra_levels"]) n.extra_levels = scalar<Index>(root["extra_levels"], "extra_levels");
  if (root["insertion"]) {
    try {
      n.insertion = parse_insertion(scalar<std::string>(root["insertion"], "insertion"));
    } catch (const ConfigError& e) {
      throw ConfigError("config key 'insertion': " + std::string(e.what()));
    }
  }
  m.validate();
  n.validate();
  return rc;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string canonical_config(const RunConfig& c) {
  const auto& m = c.model;
  std::ostringstream s;
  s << "variant: " << m.variant << "\n"
    << "depths: " << join(m.stages, &StageConfig::depth) << "\n"
    << "channels: " << join(m.stages, &StageConfig::channels) << "\n"
    << "heads: " << join(m.stages, &StageConfig::heads) << "\n";
  char alpha[32];
  std::snprintf(alpha, sizeof alpha, "%.17g", m.alpha);
  s << "alpha: " << alpha << "\n"
    << "align: " << (m.align ? "true" : "false") << "\n"
    << "expansion_ratio: " << m.expansion_ratio << "\n"
    << "ablation: " << to_string(m.ablation) << "\n"
    << "num_classes: " << m.num_classes << "\n"
    << "out_channels: " << c.neck.out_channels << "\n"
    << "insertion: " << to_string(c.neck.insertion) << "\n"
    << "extra_levels: " << c.neck.extra_levels << "\n";
  if (c.seed) s << "seed: " << *c.seed << "\n";
  return s.str();
}

std::uint64_t config_hash(const RunConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical_config(config)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex_hash(std::uint64_t hash) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

}  // namespace dsnet
