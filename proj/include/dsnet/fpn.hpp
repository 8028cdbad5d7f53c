#pragma once

#include <dsnet/backbone.hpp>

#include <optional>
#include <string_view>
#include <vector>

namespace dsnet {

/// Where the neck embeds DS-Blocks.
///  none          plain FPN
///  last          a block replaces each post-merge 3x3 smoothing conv
///  lateral       block at the stage width, then the 1x1 alignment conv
///  lateral_rev   1x1 alignment conv first, then a block at the neck width
///  lateral_extra lateral, plus a block on every extra level
enum class Insertion { none, last, lateral, lateral_rev, lateral_extra };

Insertion parse_insertion(std::string_view name);
std::string_view to_string(Insertion insertion);

struct FpnConfig {
  Index out_channels = 256;
  Insertion insertion = Insertion::none;
  Index extra_levels = 2;
  double alpha = 0.5;
  bool align = true;
  /// Heads of blocks that run at the neck width; 0 picks out_channels * alpha / 32.
  Index heads = 0;

  void validate() const;
};

template <typename Scalar>
struct FpnConv {
  Var<Scalar> weight, bias;
};

template <typename Scalar>
class DSFpn {
 public:
  DSFpn(const FpnConfig& config, const ModelConfig& backbone, std::uint64_t seed);

  const FpnConfig& config() const { return config_; }
  ParameterList<Scalar> parameters() const;
  Index block_count() const;

  /// C2..C5 stage features in, P2..P5 followed by the extra levels out.
  std::vector<Var<Scalar>> forward(const std::array<Var<Scalar>, 4>& stages) const;

  AuditReport audit(Index height, Index width) const;

  const std::array<FpnConv<Scalar>, 4>& lateral_convs() const { return lateral_; }
  const std::array<FpnConv<Scalar>, 4>& smooth_convs() const { return smooth_; }
  const std::vector<FpnConv<Scalar>>& extra_convs() const { return extra_; }

 private:
  DSBlockConfig neck_block(Index stride) const;

  FpnConfig config_;
  std::array<Index, 4> in_channels_{};
  std::array<FpnConv<Scalar>, 4> lateral_;
  std::array<FpnConv<Scalar>, 4> smooth_;  // unused under `last`
  std::vector<FpnConv<Scalar>> extra_;
  std::array<std::optional<DSBlock<Scalar>>, 4> lateral_blocks_;
  std::array<std::optional<DSBlock<Scalar>>, 4> last_blocks_;
  std::vector<DSBlock<Scalar>> extra_blocks_;
};

struct FpnAudit {
  AuditReport neck;
  AuditReport total;  // neck + backbone without the classifier head
};

template <typename Scalar>
FpnAudit fpn_audit(const DSFpn<Scalar>& neck, const Model<Scalar>& backbone, Index height, Index width);

}  // namespace dsnet
