#pragma once

#include <dsnet/audit.hpp>
#include <dsnet/ops.hpp>
#include <dsnet/parameters.hpp>

#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace dsnet {

/// Which paths of the block are wired. `no_local` feeds the raw local split to
/// alignment, `no_global` the pooled global split; `no_g2l` / `no_l2g` drop one
/// co-attention direction; `no_align` fuses the propagated streams directly.
enum class Ablation { full, no_local, no_global, no_g2l, no_l2g, no_align };

Ablation parse_ablation(std::string_view name);
std::string_view to_string(Ablation ablation);

struct AttentionConfig {
  Index heads = 1;
  Index head_dim = 0;
};

struct AlignConfig {
  Index dim = 0;
  double scale() const;
};

struct DSBlockConfig {
  Index channels = 64;
  double alpha = 0.5;
  Index heads = 1;
  bool align_enabled = false;
  Ablation ablation = Ablation::full;
  Index expansion_ratio = 4;
  /// Pooling factor taking the block's grid to the fixed global grid.
  Index downsample_factor = 8;
  /// Co-attention width; 0 selects channels / 2.
  Index align_dim = 0;

  /// Throws ConfigError on an inconsistent configuration.
  void validate() const;

  Index global_channels() const;
  Index local_channels() const;
  AttentionConfig attention() const;
  AlignConfig align() const;

  bool has_local_conv() const;
  bool has_attention() const;
  bool has_alignment() const;
  bool global_to_local() const;
  bool local_to_global() const;
};

template <typename Scalar>
struct AttentionParams {
  Var<Scalar> wq, wk, wv;         // C_g x C_g, tokens times weight
  Var<Scalar> proj_w, proj_b;     // output projection, C_g x C_g and C_g
};

template <typename Scalar>
struct CoAttentionParams {
  Var<Scalar> q_local, k_local, v_local;     // C_l x dim
  Var<Scalar> q_global, k_global, v_global;  // C_g x dim
};

template <typename Scalar>
struct DSBlockParams {
  Var<Scalar> norm1_g, norm1_b;
  Var<Scalar> in_w, in_b;
  Var<Scalar> dw_w, dw_b;
  AttentionParams<Scalar> attn;
  Var<Scalar> norm_local_g, norm_local_b, norm_global_g, norm_global_b;
  CoAttentionParams<Scalar> co;
  Var<Scalar> post_local_w, post_local_b;    // C_l x dim
  Var<Scalar> post_global_w, post_global_b;  // C_g x dim
  Var<Scalar> fuse_w, fuse_b;
  Var<Scalar> norm2_g, norm2_b;
  Var<Scalar> ffn1_w, ffn1_b, ffn2_w, ffn2_b;
};

template <typename Scalar>
struct AttentionResult {
  Var<Scalar> output;   // N x L x C
  Var<Scalar> weights;  // (N*heads) x L x L
};

/// Multi-head self-attention over tokens (N x L x C) without positional terms.
template <typename Scalar>
AttentionResult<Scalar> multi_head_attention(const Var<Scalar>& tokens, const Var<Scalar>& wq, const Var<Scalar>& wk,
                                             const Var<Scalar>& wv, Index heads);

template <typename Scalar>
struct CoAttentionResult {
  Var<Scalar> local;            // h_L, N x l_l x dim (undefined when skipped)
  Var<Scalar> global;           // h_G, N x l_g x dim
  Var<Scalar> global_to_local;  // N x l_l x l_g
  Var<Scalar> local_to_global;  // N x l_g x l_l
};

/// Single-head bidirectional co-attention with scale 1/sqrt(dim).
template <typename Scalar>
CoAttentionResult<Scalar> co_attention(const Var<Scalar>& local_tokens, const Var<Scalar>& global_tokens,
                                       const CoAttentionParams<Scalar>& w, bool global_to_local = true,
                                       bool local_to_global = true);

/// Intermediate values of one forward pass, filled when a trace is requested.
template <typename Scalar>
struct BlockTrace {
  Shape local_shape;
  Shape global_shape;
  Tensor<Scalar> attention;        // (N*heads) x l_g x l_g
  Tensor<Scalar> global_to_local;  // N x l_l x l_g
  Tensor<Scalar> local_to_global;  // N x l_g x l_l
};

template <typename Scalar>
class DSBlock {
 public:
  DSBlock(const DSBlockConfig& config, Initializer& init);

  const DSBlockConfig& config() const { return config_; }
  DSBlockParams<Scalar>& params() { return params_; }
  const DSBlockParams<Scalar>& params() const { return params_; }
  ParameterList<Scalar> parameters() const;

  /// Depthwise 3x3 propagation of the local split.
  Var<Scalar> intra_local(const Var<Scalar>& f_l) const;
  /// Self-attention over the pooled global split (N x C_g x h x w).
  Var<Scalar> intra_global(const Var<Scalar>& f_g, BlockTrace<Scalar>* trace = nullptr) const;
  /// Co-attention between the two streams; returns (h_L, h_G) in grid form.
  std::pair<Var<Scalar>, Var<Scalar>> inter_align(const Var<Scalar>& f_L, const Var<Scalar>& f_G,
                                                  BlockTrace<Scalar>* trace = nullptr) const;
  /// Upsamples the global stream to the local grid, concatenates (local first)
  /// and mixes with a 1x1 convolution.
  Var<Scalar> fuse(const Var<Scalar>& local, const Var<Scalar>& global, Index height, Index width) const;

  Var<Scalar> forward(const Var<Scalar>& x, BlockTrace<Scalar>* trace = nullptr) const;

  /// Parameters and analytic MACs of one forward at an N=1 input of height x width.
  AuditReport audit(Index height, Index width) const;

 private:
  DSBlockConfig config_;
  DSBlockParams<Scalar> params_;
};

/// Layernorm over the channel axis of an image tensor.
template <typename Scalar>
Var<Scalar> channel_layernorm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta);

}  // namespace dsnet
