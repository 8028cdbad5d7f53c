#pragma once

#include <dsnet/fpn.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

namespace dsnet {

/// Everything a config file can set: the backbone, the neck and a seed.
struct RunConfig {
  ModelConfig model = ModelConfig::preset("T");
  FpnConfig neck{};
  std::optional<std::uint64_t> seed;
};

/// YAML mapping with keys
///   variant, alpha, align, depths, channels, heads, num_classes, seed,
///   expansion_ratio, ablation, out_channels, insertion, extra_levels.
/// `variant` picks the preset; depths/channels/heads (4-element lists) then
/// override it, and any value that differs marks the variant custom.
/// Unknown keys are rejected and every diagnostic names its key.
RunConfig parse_config(std::string_view yaml);
RunConfig load_config(const std::filesystem::path& path);

/// Stable one-key-per-line rendering, used for hashing and reports.
std::string canonical_config(const RunConfig& config);

/// 64-bit FNV-1a of the canonical rendering.
std::uint64_t config_hash(const RunConfig& config);
std::string hex_hash(std::uint64_t hash);

}  // namespace dsnet
