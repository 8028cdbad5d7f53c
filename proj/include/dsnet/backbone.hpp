#pragma once

#include <dsnet/audit.hpp>
#include <dsnet/ds_block.hpp>

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace dsnet {

struct StageConfig {
  Index depth = 1;
  Index channels = 64;
  Index heads = 1;
  /// Downsampling factor of the stage grid relative to the image.
  Index stride = 4;
};

struct ModelConfig {
  /// "T", "S", "B" or "custom".
  std::string variant = "T";
  std::array<StageConfig, 4> stages{};
  double alpha = 0.5;
  bool align = false;
  Index expansion_ratio = 4;
  Index num_classes = 1000;
  Index in_channels = 3;
  Ablation ablation = Ablation::full;

  /// Stage layout of a named variant: depths T (2,2,4,1), S (3,4,8,3),
  /// B (3,4,28,3); channels (64,128,320,512); heads (1,2,5,8).
  static ModelConfig preset(std::string_view variant, bool align = false);

  void validate() const;
  /// Configuration shared by the blocks of stage `stage` (0-based).
  DSBlockConfig block_config(int stage) const;
  /// Side of the fixed global grid for an image side, H / 32.
  static constexpr Index kGlobalStride = 32;
};

template <typename Scalar>
struct ModelTrace {
  std::array<Shape, 4> stage_shapes;
  /// One entry per block in execution order, with its stage index.
  std::vector<std::pair<int, BlockTrace<Scalar>>> blocks;
};

template <typename Scalar>
struct ModelOutput {
  Var<Scalar> logits;                 // N x num_classes
  std::array<Var<Scalar>, 4> stages;  // C2..C5 feature maps
};

template <typename Scalar>
class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const std::vector<std::vector<DSBlock<Scalar>>>& stages() const { return stages_; }
  std::vector<std::vector<DSBlock<Scalar>>>& stages() { return stages_; }

  /// Every learnable tensor, in a fixed order with hierarchical names.
  ParameterList<Scalar> parameters() const;

  /// images: N x in_channels x H x W with H and W divisible by 32.
  ModelOutput<Scalar> forward(const Var<Scalar>& images, ModelTrace<Scalar>* trace = nullptr) const;

  /// Exact parameter count and analytic MACs of one forward at N = 1.
  AuditReport audit(Index height, Index width) const;

 private:
  ModelConfig config_;
  Var<Scalar> stem_w_, stem_b_;
  std::array<Var<Scalar>, 3> transition_w_, transition_b_;
  std::vector<std::vector<DSBlock<Scalar>>> stages_;
  Var<Scalar> head_w_, head_b_;
};

template <typename Scalar>
Model<Scalar> build_model(const ModelConfig& config, std::uint64_t seed) {
  return Model<Scalar>(config, seed);
}

}  // namespace dsnet
