#include "test_util.hpp"

#include <dsnet/ds_block.hpp>
#include <dsnet/verify/gradcheck.hpp>
#include <dsnet/verify/oracles.hpp>

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

namespace dsnet {
namespace {

using test::leaf;
using test::probe_loss;
using test::rand64;

DSBlockConfig block_config(Index channels, double alpha, Index heads, bool align, Index factor,
                           Ablation ablation = Ablation::full) {
  DSBlockConfig c;
  c.channels = channels;
  c.alpha = alpha;
  c.heads = heads;
  c.align_enabled = align;
  c.downsample_factor = factor;
  c.ablation = ablation;
  return c;
}

/// Row block n of an N x L x D tensor as an L x D matrix.
Tensor<double> sample(const Tensor<double>& t, Index n) {
  const Index rows = t.dim(1), cols = t.dim(2);
  const double* base = t.data() + n * rows * cols;
  return Tensor<double>({rows, cols}, std::vector<double>(base, base + rows * cols));
}

/// Randomizes every parameter so that zero biases and unit gains do not hide bugs.
template <typename Scalar>
void randomize(const ParameterList<Scalar>& params, std::uint64_t seed, double spread = 0.5) {
  std::mt19937_64 rng(seed);
  for (auto p : params) p.var.mutable_value() = random_uniform<Scalar>(p.var.shape(), rng, -spread, spread);
}

void expect_rows_normalized(const Tensor<double>& w) {
  const Index cols = w.dim(-1);
  for (Index r = 0; r < w.size() / cols; ++r) {
    double s = 0;
    for (Index j = 0; j < cols; ++j) {
      const double v = w[r * cols + j];
      EXPECT_GT(v, 0.0);
      EXPECT_LE(v, 1.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

// ---- configuration -------------------------------------------------------------

TEST(DSBlockConfig, HeadDimIs32InEveryStage) {
  const Index channels[] = {64, 128, 320, 512};
  const Index heads[] = {1, 2, 5, 8};
  for (int s = 0; s < 4; ++s) EXPECT_EQ(block_config(channels[s], 0.5, heads[s], true, 1).attention().head_dim, 32);
}

TEST(DSBlockConfig, RejectsInconsistentSettings) {
  EXPECT_THROW(block_config(64, 0.5, 3, false, 8).validate(), ConfigError);
  EXPECT_THROW(block_config(10, 0.25, 1, false, 8).validate(), ConfigError);
  EXPECT_THROW(block_config(64, 1.5, 1, false, 8).validate(), ConfigError);
  EXPECT_NO_THROW(block_config(64, 0.0, 3, false, 8).validate());
}

TEST(DSBlockConfig, AblationNamesRoundTrip) {
  for (auto a : {Ablation::full, Ablation::no_local, Ablation::no_global, Ablation::no_g2l, Ablation::no_l2g,
                 Ablation::no_align})
    EXPECT_EQ(parse_ablation(to_string(a)), a);
  EXPECT_THROW(parse_ablation("no_fpn"), ConfigError);
}

// ---- intra-scale propagation -------------------------------------------------------

TEST(IntraLocal, IdentityKernelPassesThrough) {
  Initializer init(1);
  DSBlock<double> block(block_config(8, 0.5, 1, false, 1), init);
  auto& w = block.params().dw_w.mutable_value();
  w.fill(0);
  for (Index c = 0; c < 4; ++c) w.at(c, 1, 1) = 1;
  std::mt19937_64 rng(2);
  auto x = constant(rand64({2, 4, 5, 6}, rng));
  EXPECT_TRUE(bitwise_equal(block.intra_local(x).value(), x.value()));
}

TEST(IntraLocal, MatchesLoopOracle) {
  Initializer init(3);
  DSBlock<double> block(block_config(8, 0.5, 1, false, 1), init);
  randomize(block.parameters(), 4);
  std::mt19937_64 rng(5);
  auto x = rand64({2, 4, 7, 5}, rng);
  auto fast = block.intra_local(constant(x)).value();
  auto slow = verify::oracle_depthwise3x3(x, block.params().dw_w.value(), block.params().dw_b.value());
  EXPECT_LE(max_abs_diff(fast, slow), 1e-12);
}

TEST(IntraGlobal, SingleTokenAttendsToItself) {
  std::mt19937_64 rng(6);
  auto tokens = constant(rand64({1, 1, 4}, rng));
  auto wq = constant(rand64({4, 4}, rng)), wk = constant(rand64({4, 4}, rng)), wv = constant(rand64({4, 4}, rng));
  auto r = multi_head_attention(tokens, wq, wk, wv, 2);
  for (double w : r.weights.value().values()) EXPECT_EQ(w, 1.0);
  auto expected = matmul(tokens, wv).value();
  EXPECT_LE(max_abs_diff(r.output.value(), expected), 1e-15);
}

TEST(IntraGlobal, IdenticalTokensGiveIdenticalOutputs) {
  std::mt19937_64 rng(7);
  auto row = rand64({1, 1, 6}, rng);
  Tensor<double> t({1, 5, 6});
  for (Index i = 0; i < 5; ++i)
    for (Index j = 0; j < 6; ++j) t.at(0, i, j) = row.at(0, 0, j);
  auto r = multi_head_attention(constant(t), constant(rand64({6, 6}, rng)), constant(rand64({6, 6}, rng)),
                                constant(rand64({6, 6}, rng)), 3);
  for (Index i = 1; i < 5; ++i)
    for (Index j = 0; j < 6; ++j) EXPECT_EQ(r.output.value().at(0, i, j), r.output.value().at(0, 0, j));
}

TEST(IntraGlobal, TwoTokenHandEvaluation) {
  // d = 1, identity projections: scores s_ij = x_i x_j.
  auto tokens = constant(Tensor<double>({1, 2, 1}, {0.5, -1.5}));
  auto one = constant(Tensor<double>({1, 1}, {1.0}));
  auto r = multi_head_attention(tokens, one, one, one, 1);
  const double x[2] = {0.5, -1.5};
  for (int i = 0; i < 2; ++i) {
    const double e0 = std::exp(x[i] * x[0]), e1 = std::exp(x[i] * x[1]);
    const double expected = (e0 * x[0] + e1 * x[1]) / (e0 + e1);
    EXPECT_NEAR(r.output.value()[i], expected, 1e-12);
  }
}

TEST(IntraGlobal, MatchesAttentionOracle) {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<Index> len(1, 20);
  std::uniform_int_distribution<Index> head_count(1, 4);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Index heads = head_count(rng);
    const Index c = heads * std::uniform_int_distribution<Index>(1, 4)(rng);
    const Index l = len(rng);
    auto x = rand64({2, l, c}, rng);
    auto wq = rand64({c, c}, rng), wk = rand64({c, c}, rng), wv = rand64({c, c}, rng);
    auto fast = multi_head_attention(constant(x), constant(wq), constant(wk), constant(wv), heads);
    for (Index n = 0; n < 2; ++n) {
      auto ref = verify::oracle_attention(sample(x, n), wq, wk, wv, heads);
      worst = std::max(worst, max_abs_diff(sample(fast.output.value(), n), ref.output));
      for (Index h = 0; h < heads; ++h)
        worst = std::max(worst, max_abs_diff(sample(fast.weights.value(), n * heads + h), ref.weights[h]));
    }
  }
  EXPECT_LE(worst, 1e-10);
}

TEST(IntraGlobal, TokenPermutationIsEquivariant) {
  Initializer init(9);
  DSBlock<double> block(block_config(16, 0.5, 2, false, 1), init);
  randomize(block.parameters(), 10);
  std::mt19937_64 rng(11);
  const Index h = 3, w = 4, l = h * w;
  auto tokens = rand64({1, l, 8}, rng);
  std::vector<Index> perm(l);
  std::iota(perm.begin(), perm.end(), Index{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  Tensor<double> permuted(tokens.shape());
  for (Index i = 0; i < l; ++i)
    for (Index j = 0; j < 8; ++j) permuted.at(0, i, j) = tokens.at(0, perm[i], j);

  auto out = to_tokens(block.intra_global(from_tokens(constant(tokens), h, w))).value();
  auto out_p = to_tokens(block.intra_global(from_tokens(constant(permuted), h, w))).value();
  for (Index i = 0; i < l; ++i)
    for (Index j = 0; j < 8; ++j) EXPECT_EQ(out_p.at(0, i, j), out.at(0, perm[i], j)) << i << "," << j;
}

// ---- inter-scale alignment ---------------------------------------------------------

CoAttentionParams<double> random_co_params(Index cl, Index cg, Index dim, std::mt19937_64& rng) {
  return {constant(rand64({cl, dim}, rng)), constant(rand64({cl, dim}, rng)), constant(rand64({cl, dim}, rng)),
          constant(rand64({cg, dim}, rng)), constant(rand64({cg, dim}, rng)), constant(rand64({cg, dim}, rng))};
}

verify::CoAttentionWeights64 as_oracle(const CoAttentionParams<double>& p) {
  return {p.q_local.value(),  p.k_local.value(),  p.v_local.value(),
          p.q_global.value(), p.k_global.value(), p.v_global.value()};
}

TEST(InterAlign, MatchesCoAttentionOracle) {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<Index> ext(1, 12);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Index ll = trial == 0 ? 2 : ext(rng), lg = trial == 0 ? 3 : ext(rng);
    const Index cl = ext(rng), cg = ext(rng), dim = ext(rng);
    auto local = rand64({2, ll, cl}, rng);
    auto global = rand64({2, lg, cg}, rng);
    auto p = random_co_params(cl, cg, dim, rng);
    auto fast = co_attention(constant(local), constant(global), p);
    for (Index n = 0; n < 2; ++n) {
      auto ref = verify::oracle_coattention(sample(local, n), sample(global, n), as_oracle(p));
      worst = std::max({worst, max_abs_diff(sample(fast.local.value(), n), ref.local),
                        max_abs_diff(sample(fast.global.value(), n), ref.global),
                        max_abs_diff(sample(fast.global_to_local.value(), n), ref.global_to_local),
                        max_abs_diff(sample(fast.local_to_global.value(), n), ref.local_to_global)});
    }
  }
  EXPECT_LE(worst, 1e-10);
}

TEST(InterAlign, SingleGlobalTokenBroadcasts) {
  std::mt19937_64 rng(13);
  auto local = constant(rand64({1, 6, 4}, rng));
  auto global = constant(rand64({1, 1, 4}, rng));
  auto p = random_co_params(4, 4, 3, rng);
  auto r = co_attention(local, global, p);
  for (double w : r.global_to_local.value().values()) EXPECT_EQ(w, 1.0);
  auto v = matmul(global, p.v_global).value();
  for (Index i = 0; i < 6; ++i)
    for (Index j = 0; j < 3; ++j) EXPECT_NEAR(r.local.value().at(0, i, j), v.at(0, 0, j), 1e-15);
}

TEST(InterAlign, WeightRowsAreNormalized) {
  Initializer init(14);
  DSBlock<double> block(block_config(16, 0.5, 2, true, 4), init);
  randomize(block.parameters(), 15, 1.0);
  std::mt19937_64 rng(16);
  BlockTrace<double> trace;
  block.forward(constant(rand64({2, 16, 8, 8}, rng, -3, 3)), &trace);
  ASSERT_EQ(trace.global_to_local.shape(), (Shape{2, 64, 4}));
  ASSERT_EQ(trace.local_to_global.shape(), (Shape{2, 4, 64}));
  ASSERT_EQ(trace.attention.shape(), (Shape{4, 4, 4}));
  expect_rows_normalized(trace.global_to_local);
  expect_rows_normalized(trace.local_to_global);
  expect_rows_normalized(trace.attention);
}

TEST(InterAlign, RejectsMismatchedStreams) {
  Initializer init(17);
  DSBlock<double> block(block_config(8, 0.5, 1, true, 2), init);
  std::mt19937_64 rng(18);
  EXPECT_THROW(block.inter_align(constant(rand64({1, 3, 4, 4}, rng)), constant(rand64({1, 4, 2, 2}, rng))),
               DimensionError);
}

// ---- fusion and full block ---------------------------------------------------------

TEST(Fuse, LocalStreamOccupiesLeadingChannels) {
  Initializer init(19);
  DSBlock<double> block(block_config(8, 0.5, 1, false, 2), init);
  auto& w = block.params().fuse_w.mutable_value();
  w.fill(0);
  for (Index c = 0; c < 8; ++c) w.at(c, c) = 1;
  std::mt19937_64 rng(20);
  auto local = constant(rand64({1, 4, 4, 4}, rng, 1, 2));
  auto global = constant(Tensor<double>({1, 4, 2, 2}));
  auto out = block.fuse(local, global, 4, 4).value();
  for (Index c = 0; c < 8; ++c)
    for (Index i = 0; i < 16; ++i) {
      const double v = out[c * 16 + i];
      if (c < 4) EXPECT_NE(v, 0.0);
      else EXPECT_EQ(v, 0.0);
    }
}

TEST(Fuse, ConstantGlobalMapStaysConstantAfterUpsampling) {
  Initializer init(21);
  DSBlock<double> block(block_config(4, 1.0, 1, false, 4), init);
  auto& w = block.params().fuse_w.mutable_value();
  w.fill(0);
  for (Index c = 0; c < 4; ++c) w.at(c, c) = 1;
  auto out = block.fuse(Var<double>(), constant(Tensor<double>({1, 4, 2, 2}, 3.0)), 8, 8).value();
  for (double v : out.values()) EXPECT_EQ(v, 3.0);
}

TEST(DSBlock, StageOneShapesAt224) {
  Initializer init(22);
  DSBlock<float> block(block_config(64, 0.5, 1, true, 8), init);
  std::mt19937_64 rng(23);
  NoGradGuard no_grad;
  BlockTrace<float> trace;
  auto y = block.forward(constant(random_uniform<float>({1, 64, 56, 56}, rng)), &trace);
  EXPECT_EQ(trace.local_shape, (Shape{1, 32, 56, 56}));
  EXPECT_EQ(trace.global_shape, (Shape{1, 32, 7, 7}));
  EXPECT_EQ(y.shape(), (Shape{1, 64, 56, 56}));
}

TEST(DSBlock, ShapePreservedForEveryAblationAndAlpha) {
  std::mt19937_64 rng(24);
  auto x = constant(rand64({2, 16, 8, 8}, rng));
  for (double alpha : {0.0, 0.25, 0.5, 0.75, 1.0})
    for (auto a : {Ablation::full, Ablation::no_local, Ablation::no_global, Ablation::no_g2l, Ablation::no_l2g,
                   Ablation::no_align}) {
      Initializer init(25);
      DSBlock<double> block(block_config(16, alpha, 2, true, 4, a), init);
      EXPECT_EQ(block.forward(x).shape(), x.shape()) << alpha << " " << to_string(a);
    }
}

TEST(DSBlock, RejectsGridNotDivisibleByFactor) {
  Initializer init(26);
  DSBlock<double> block(block_config(8, 0.5, 1, false, 4), init);
  std::mt19937_64 rng(27);
  EXPECT_THROW(block.forward(constant(rand64({1, 8, 6, 6}, rng))), DimensionError);
  EXPECT_THROW(block.forward(constant(rand64({1, 4, 8, 8}, rng))), DimensionError);
}

TEST(DSBlock, NoAlignEqualsPlainConcatBlock) {
  Initializer init_a(28), init_b(28);
  DSBlock<double> plain(block_config(16, 0.5, 2, false, 4), init_a);
  DSBlock<double> ablated(block_config(16, 0.5, 2, true, 4, Ablation::no_align), init_b);
  auto pp = plain.parameters();
  auto pa = ablated.parameters();
  ASSERT_EQ(pp.size(), pa.size());
  randomize(pp, 29);
  for (std::size_t i = 0; i < pp.size(); ++i) {
    ASSERT_EQ(pp[i].name, pa[i].name);
    pa[i].var.mutable_value() = pp[i].var.value();
  }
  std::mt19937_64 rng(30);
  auto x = constant(rand64({2, 16, 8, 8}, rng));
  EXPECT_TRUE(bitwise_equal(plain.forward(x).value(), ablated.forward(x).value()));
}

TEST(DSBlock, AlphaExtremesDropTheUnusedPath) {
  Initializer init(31);
  DSBlock<double> conv_only(block_config(16, 0.0, 2, true, 4), init);
  DSBlock<double> attn_only(block_config(16, 1.0, 2, true, 4), init);
  for (const auto& p : conv_only.parameters()) {
    EXPECT_EQ(p.name.find("attn"), std::string::npos) << p.name;
    EXPECT_EQ(p.name.find("align"), std::string::npos) << p.name;
  }
  for (const auto& p : attn_only.parameters()) EXPECT_EQ(p.name.find("local"), std::string::npos) << p.name;
  EXPECT_EQ(conv_only.audit(8, 8).entries[3].params, 0);  // attention
  EXPECT_EQ(attn_only.audit(8, 8).entries[2].params, 0);  // local
}

TEST(DSBlock, DirectionalAblationsRemoveOnePath) {
  Initializer a(32), b(32), c(32);
  DSBlock<double> full(block_config(16, 0.5, 2, true, 4), a);
  DSBlock<double> no_g2l(block_config(16, 0.5, 2, true, 4, Ablation::no_g2l), b);
  DSBlock<double> no_l2g(block_config(16, 0.5, 2, true, 4, Ablation::no_l2g), c);
  const Index cl = 8, cg = 8, dim = 8;
  const Index g2l = cl * dim + 2 * cg * dim + cl * dim + cl;
  const Index l2g = cg * dim + 2 * cl * dim + cg * dim + cg;
  EXPECT_EQ(count_scalars(full.parameters()) - count_scalars(no_g2l.parameters()), g2l);
  EXPECT_EQ(count_scalars(full.parameters()) - count_scalars(no_l2g.parameters()), l2g);

  std::mt19937_64 rng(33);
  auto f_L = constant(rand64({1, 8, 8, 8}, rng));
  auto f_G = constant(rand64({1, 8, 2, 2}, rng));
  auto [hl1, hg1] = no_g2l.inter_align(f_L, f_G);
  EXPECT_EQ(hl1.node_ptr(), f_L.node_ptr());
  EXPECT_NE(hg1.node_ptr(), f_G.node_ptr());
  auto [hl2, hg2] = no_l2g.inter_align(f_L, f_G);
  EXPECT_NE(hl2.node_ptr(), f_L.node_ptr());
  EXPECT_EQ(hg2.node_ptr(), f_G.node_ptr());
}

TEST(DSBlock, NoLocalFeedsRawSplitToAlignment) {
  Initializer init(34);
  DSBlock<double> block(block_config(16, 0.5, 2, true, 4, Ablation::no_local), init);
  EXPECT_FALSE(block.params().dw_w.defined());
  EXPECT_TRUE(block.params().co.q_local.defined());
  std::mt19937_64 rng(35);
  auto f_l = constant(rand64({1, 8, 4, 4}, rng));
  EXPECT_EQ(block.intra_local(f_l).node_ptr(), f_l.node_ptr());
}

TEST(DSBlock, AlphaZeroHasNoAttentionSensitivity) {
  Initializer init(36);
  DSBlock<double> block(block_config(8, 0.0, 1, true, 2), init);
  for (const auto& p : block.parameters()) {
    EXPECT_EQ(p.name.rfind("attn", 0), std::string::npos);
    EXPECT_EQ(p.name.rfind("align", 0), std::string::npos);
  }
  EXPECT_FALSE(block.params().attn.wq.defined());
}

TEST(DSBlock, GradientsMatchFiniteDifferences) {
  Initializer init(37);
  DSBlock<double> block(block_config(16, 0.5, 2, true, 8), init);
  auto params = block.parameters();
  std::mt19937_64 rng(38);
  // Wide query/key projections keep both attentions away from the uniform
  // regime, where their gradients vanish below finite-difference resolution.
  for (auto p : params) {
    const bool qk = p.name.find(".q") != std::string::npos || p.name.find(".k") != std::string::npos ||
                    p.name.find(".wq") != std::string::npos || p.name.find(".wk") != std::string::npos;
    const double spread = qk ? 2.0 : 0.5;
    p.var.mutable_value() = rand64(p.var.shape(), rng, -spread, spread);
  }
  // Coarse structure survives the 8x pooling, so global tokens differ.
  auto input = rand64({1, 16, 16, 16}, rng, -0.3, 0.3);
  auto coarse = rand64({1, 16, 2, 2}, rng, -2, 2);
  for (Index c = 0; c < 16; ++c)
    for (Index i = 0; i < 16; ++i)
      for (Index j = 0; j < 16; ++j) input.at(0, c, i, j) += coarse.at(0, c, i / 8, j / 8);
  auto x = constant(input);
  auto report = verify::gradcheck([&] { return probe_loss(block.forward(x)); }, params);
  for (const auto& e : report.entries) EXPECT_LT(e.max_rel_error, 1e-4) << e.name;
  EXPECT_TRUE(report.pass);
  for (const auto& p : params) {
    if (p.name.find("align.q") == std::string::npos && p.name.find("attn.wq") == std::string::npos) continue;
    EXPECT_GT(p.var.grad().flat().abs().maxCoeff(), 1e-3) << p.name << " gradient too small to be informative";
  }
}

TEST(DSBlock, AuditMatchesCountedMacsAndParameters) {
  for (auto a : {Ablation::full, Ablation::no_local, Ablation::no_global, Ablation::no_g2l, Ablation::no_align})
    for (double alpha : {0.0, 0.5, 1.0}) {
      Initializer init(40);
      DSBlock<float> block(block_config(16, alpha, 2, true, 4, a), init);
      std::mt19937_64 rng(41);
      auto x = constant(random_uniform<float>({1, 16, 8, 12}, rng));
      MacCounter counter;
      block.forward(x);
      auto report = block.audit(8, 12);
      EXPECT_EQ(counter.count(), report.macs()) << to_string(a) << " " << alpha;
      EXPECT_EQ(report.parameter_count(), count_scalars(block.parameters()));
    }
}

TEST(DSBlock, DeterministicForSameSeed) {
  Initializer a(42), b(42);
  DSBlock<double> x(block_config(16, 0.5, 2, true, 4), a), y(block_config(16, 0.5, 2, true, 4), b);
  std::mt19937_64 rng(43);
  auto in = constant(rand64({1, 16, 8, 8}, rng));
  EXPECT_TRUE(bitwise_equal(x.forward(in).value(), y.forward(in).value()));
}

}  // namespace
}  // namespace dsnet
