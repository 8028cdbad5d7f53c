#pragma once

// Reference implementations written as literal per-element loops. They only
// use Tensor as a container and never call into the kernels in ops.hpp.

#include <dsnet/tensor.hpp>

namespace dsnet::verify {

using Matrix64 = Tensor<double>;

/// a (m x k) times b (k x n).
Matrix64 oracle_matmul(const Matrix64& a, const Matrix64& b);

/// x: N x Cin x H x W, w: Cout x Cin, b: Cout (may be empty).
Tensor<double> oracle_conv1x1(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b);

/// Zero-padded 3x3 per-channel filter. x: N x C x H x W, w: C x 3 x 3, b: C.
Tensor<double> oracle_depthwise3x3(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b);

struct AttentionOracleResult {
  Matrix64 output;                 // L x C
  std::vector<Matrix64> weights;   // per head, L x L
};

/// Multi-head self-attention over token rows (L x C):
///   f_Q = f_g W_Q, f_K = f_g W_K, f_V = f_g W_V,
///   head h: softmax(f_Q^h f_K^h^T / sqrt(d)) f_V^h, d = C / heads,
/// heads concatenated along features.
AttentionOracleResult oracle_attention(const Matrix64& rows, const Matrix64& wq, const Matrix64& wk, const Matrix64& wv,
                                       Index heads);

struct CoAttentionOracleResult {
  Matrix64 local;           // h_L, l_l x dim
  Matrix64 global;          // h_G, l_g x dim
  Matrix64 global_to_local; // W_{G->L}, l_l x l_g
  Matrix64 local_to_global; // W_{L->G}, l_g x l_l
};

struct CoAttentionWeights64 {
  Matrix64 q_local, k_local, v_local;     // C_l x dim
  Matrix64 q_global, k_global, v_global;  // C_g x dim
};

/// Bidirectional co-attention between local rows (l_l x C_l) and global rows
/// (l_g x C_g) with a single head of width dim.
CoAttentionOracleResult oracle_coattention(const Matrix64& local_rows, const Matrix64& global_rows,
                                           const CoAttentionWeights64& w);

}  // namespace dsnet::verify
