#pragma once

// Differentiable kernels. Every function records a graph node whose backward
// rule accumulates into the inputs that require gradients. Image tensors are
// N x C x H x W; token tensors are N x L x D.

#include <dsnet/autograd.hpp>

#include <span>
#include <utility>

namespace dsnet {

// ---- elementwise and reductions -------------------------------------------

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b);
template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar factor);
/// Sum of all entries, shape [1].
template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a);
template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& a);
/// Exact (erf) GELU.
template <typename Scalar>
Var<Scalar> gelu(const Var<Scalar>& a);

// ---- layout ---------------------------------------------------------------

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& a, Shape shape);
/// Swaps the last two axes of a rank-2 or rank-3 tensor.
template <typename Scalar>
Var<Scalar> transpose_last2(const Var<Scalar>& a);
/// N x C x H x W -> N x (H*W) x C.
template <typename Scalar>
Var<Scalar> to_tokens(const Var<Scalar>& x);
/// N x (H*W) x C -> N x C x H x W.
template <typename Scalar>
Var<Scalar> from_tokens(const Var<Scalar>& t, Index height, Index width);
/// N x L x (h*d) -> (N*h) x L x d.
template <typename Scalar>
Var<Scalar> split_heads(const Var<Scalar>& t, Index heads);
/// (N*h) x L x d -> N x L x (h*d).
template <typename Scalar>
Var<Scalar> merge_heads(const Var<Scalar>& t, Index heads);
/// Channels [begin, end) of an image tensor.
template <typename Scalar>
Var<Scalar> slice_channels(const Var<Scalar>& x, Index begin, Index end);

/// Channel split at floor(alpha * C). `global` takes the leading channels.
template <typename Scalar>
struct ChannelSplit {
  Var<Scalar> local;
  Var<Scalar> global;
};

/// Number of channels routed to the global stream.
Index global_channels(Index channels, double alpha);

template <typename Scalar>
ChannelSplit<Scalar> split_channels(const Var<Scalar>& x, double alpha);
template <typename Scalar>
Var<Scalar> concat_channels(const Var<Scalar>& a, const Var<Scalar>& b);

// ---- dense algebra ----------------------------------------------------------

/// (m x k)(k x n), batched (B x m x k)(B x k x n), or (B x m x k)(k x n) with a
/// shared right operand.
template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b);
/// Numerically shifted softmax over the last axis.
template <typename Scalar>
Var<Scalar> softmax_lastdim(const Var<Scalar>& x);
/// Normalizes over the last axis with population variance, then applies gamma/beta.
template <typename Scalar>
Var<Scalar> layernorm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta, Scalar eps = Scalar(1e-5));
/// y = x W^T + b over the last axis; weight is out x in, bias may be undefined.
template <typename Scalar>
Var<Scalar> linear(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias);

// ---- convolution and resampling ---------------------------------------------

/// Pointwise convolution; weight is C_out x C_in, bias C_out (may be undefined).
template <typename Scalar>
Var<Scalar> conv1x1(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias);
/// Per-channel 3x3 filter, stride 1, zero padding 1. weight C x 3 x 3, bias C.
template <typename Scalar>
Var<Scalar> depthwise_conv3x3(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias);
/// Dense k x k convolution; weight C_out x C_in x k x k.
template <typename Scalar>
Var<Scalar> conv2d(const Var<Scalar>& x, const Var<Scalar>& weight, const Var<Scalar>& bias, Index stride,
                   Index padding);
template <typename Scalar>
Var<Scalar> avgpool(const Var<Scalar>& x, Index factor);
/// N x C x H x W -> N x C.
template <typename Scalar>
Var<Scalar> global_avgpool(const Var<Scalar>& x);
/// Bilinear interpolation with half-pixel centers (align_corners = false).
template <typename Scalar>
Var<Scalar> bilinear_upsample(const Var<Scalar>& x, Index height, Index width);
template <typename Scalar>
Var<Scalar> upsample_nearest(const Var<Scalar>& x, Index height, Index width);

// ---- loss -------------------------------------------------------------------

/// Mean cross-entropy of log-softmax(logits) against integer labels.
template <typename Scalar>
Var<Scalar> cross_entropy(const Var<Scalar>& logits, std::span<const int> labels);

}  // namespace dsnet
